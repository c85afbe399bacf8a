"""Datasets: native TSV directories, the classic Cora text files, and a
seeded imbalanced stochastic block model.

Native directory layout (tab separated, ``#`` starts a comment line)::

    edges.tsv      u <TAB> v                      one undirected edge per line
    features.tsv   node <TAB> x_1 <TAB> ... x_D   exactly one row per node
    labels.tsv     node <TAB> class               node ids are 0..N-1
    masks.tsv      node <TAB> train|val|test      optional
    meta.json      {"name": ..., "num_classes": K}  optional
"""

from __future__ import annotations

import enum
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import AttributedGraph, GraphInputError, build_graph

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


class DatasetFormatError(ValueError):
    """A dataset file is missing or malformed. ``path`` and ``line`` locate it."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFileError(DatasetFormatError):
    pass


class RaggedRowError(DatasetFormatError):
    pass


class UnknownNodeError(DatasetFormatError):
    pass


class BadValueError(DatasetFormatError):
    pass


class Provenance(str, enum.Enum):
    FILE = "file"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: AttributedGraph
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str
    provenance: Provenance = Provenance.FILE

    def __post_init__(self):
        masks = (self.train_mask, self.val_mask, self.test_mask)
        seen = np.zeros(self.graph.num_nodes, dtype=np.int64)
        for m in masks:
            np.add.at(seen, m, 1)
        if np.any(seen > 1):
            raise ValueError("train/val/test masks overlap")
        present = np.unique(self.graph.labels[self.train_mask])
        if present.size != self.graph.num_classes:
            missing = sorted(set(range(self.graph.num_classes)) - set(present.tolist()))
            raise ValueError(f"classes {missing} have no training node")


@dataclass(frozen=True)
class SbmSpec:
    """Imbalanced SBM: class ``c`` has ``ceil(head_size * decay**c)`` nodes."""

    num_classes: int = 3
    head_size: int = 300
    decay: float = 0.2
    p_in: float = 0.06
    p_out: float = 0.01
    feature_dim: int = 8
    feature_noise: float = 0.8
    seed: int = 0
    name: str = "sbm"

    def class_sizes(self) -> list[int]:
        # the 1e-9 guards float error such as 300 * 0.2**2 = 12.000000000000002
        return [math.ceil(self.head_size * self.decay**c - 1e-9) for c in range(self.num_classes)]

    @property
    def r_imb(self) -> float:
        sizes = self.class_sizes()
        return sizes[0] / sizes[-1]

    def validate(self) -> None:
        if self.num_classes < 1 or self.head_size < 1 or self.feature_dim < 1:
            raise ValueError("num_classes, head_size and feature_dim must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if not (0 <= self.p_out < self.p_in <= 1):
            raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be nonnegative")
        if min(self.class_sizes()) < 1:
            raise ValueError(f"class sizes {self.class_sizes()} include an empty class")

    @classmethod
    def from_json(cls, path: Path | str) -> "SbmSpec":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SBM spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(
    labels: np.ndarray,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    stratified: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffled train/val/test node indices, deterministic given ``seed``.

    Stratified splits round per class and always keep at least one training
    node per class. When the fractions sum to 1 the test set takes whatever
    rounding leaves over.
    """
    labels = np.asarray(labels)
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or min(fr) < 0 or fr[0] <= 0 or sum(fr) > 1 + 1e-9:
        raise ValueError(f"fractions must be 3 nonnegative values with train > 0 and sum <= 1, got {fractions}")
    fill_test = abs(sum(fr) - 1.0) < 1e-9
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(labels == k) for k in np.unique(labels)] if stratified else [np.arange(labels.size)]
    train, val, test = [], [], []
    for members in groups:
        members = rng.permutation(members)
        n = members.size
        n_train = max(1, _round_half_up(fr[0] * n))
        n_val = _round_half_up(fr[1] * n)
        n_test = n - n_train - n_val if fill_test else _round_half_up(fr[2] * n)
        if n < 3 and fr[1] > 0 and fr[2] > 0:
            warnings.warn(f"class with {n} nodes cannot fill three masks; 1 to train, rest to test")
            n_train, n_val, n_test = 1, 0, n - 1
        else:
            # tiny classes: keep the requested masks nonempty by borrowing from train
            if fr[2] > 0 and n_test <= 0 and n_train > 1:
                n_train, n_test = n_train - 1, 1
            if fr[1] > 0 and n_val <= 0 and n_train > 1:
                n_train, n_val = n_train - 1, 1
            n_val = max(0, min(n_val, n - n_train))
            n_test = max(0, min(n_test, n - n_train - n_val))
        train.append(members[:n_train])
        val.append(members[n_train:n_train + n_val])
        test.append(members[n_train + n_val:n_train + n_val + n_test])
    train_idx, val_idx, test_idx = (np.sort(np.concatenate(p)).astype(np.int64) for p in (train, val, test))
    if not stratified:
        # move one node of every class missing from train into train
        for k in np.unique(labels):
            if not np.any(labels[train_idx] == k):
                donor = val_idx if np.any(labels[val_idx] == k) else test_idx
                node = donor[labels[donor] == k][0]
                val_idx, test_idx = val_idx[val_idx != node], test_idx[test_idx != node]
                train_idx = np.sort(np.append(train_idx, node))
    return train_idx, val_idx, test_idx


def make_bundle(graph: AttributedGraph, name: str, seed: int = 0,
                fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
                provenance: Provenance = Provenance.FILE) -> DatasetBundle:
    tr, va, te = split(graph.labels, fractions, seed)
    return DatasetBundle(graph, tr, va, te, name, provenance)


# ---------------------------------------------------------------------------
# Synthetic graphs
# ---------------------------------------------------------------------------

def gen_synthetic(spec: SbmSpec, fractions: tuple[float, float, float] = DEFAULT_FRACTIONS) -> DatasetBundle:
    """Sample an imbalanced SBM with noisy one-hot class features.

    Node ids are shuffled so that id order carries no class information.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sizes = spec.class_sizes()
    block = np.repeat(np.arange(spec.num_classes), sizes)
    n = block.size
    relabel = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[relabel] = block

    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    features = np.zeros((n, spec.feature_dim))
    features[np.arange(n), labels % spec.feature_dim] = 1.0
    if spec.feature_noise > 0:
        features += spec.feature_noise * rng.standard_normal(features.shape)

    graph = build_graph(edges, features, labels, spec.num_classes)
    return make_bundle(graph, spec.name, spec.seed, fractions, Provenance.SYNTHETIC)


# ---------------------------------------------------------------------------
# Native TSV format
# ---------------------------------------------------------------------------

def _rows(path: Path):
    if not path.exists():
        raise MissingFileError("file not found", path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def _int(tok: str, path: Path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise BadValueError(f"expected an integer, got {tok!r}", path, lineno) from None


def load_native(directory: Path | str, seed: int = 0,
                fractions: tuple[float, float, float] = DEFAULT_FRACTIONS) -> DatasetBundle:
    """Parse and validate a native dataset directory.

    Without ``masks.tsv`` the masks come from a stratified :func:`split` with ``seed``.
    """
    d = Path(directory)
    meta = {}
    if (d / "meta.json").exists():
        meta = json.loads((d / "meta.json").read_text())
    num_classes = meta.get("num_classes")

    label_rows: dict[int, int] = {}
    lpath = d / "labels.tsv"
    for lineno, row in _rows(lpath):
        if len(row) != 2:
            raise RaggedRowError(f"expected 2 columns, got {len(row)}", lpath, lineno)
        node, cls = _int(row[0], lpath, lineno), _int(row[1], lpath, lineno)
        if node in label_rows:
            raise BadValueError(f"duplicate label for node {node}", lpath, lineno)
        if cls < 0 or (num_classes is not None and cls >= num_classes):
            raise BadValueError(f"class {cls} outside [0, {num_classes})", lpath, lineno)
        label_rows[node] = cls
    n = len(label_rows)
    if sorted(label_rows) != list(range(n)):
        raise BadValueError(f"node ids in labels must be exactly 0..{n - 1}", lpath)
    labels = np.array([label_rows[i] for i in range(n)], dtype=np.int64)

    fpath = d / "features.tsv"
    features: np.ndarray | None = None
    seen = np.zeros(n, dtype=bool)
    for lineno, row in _rows(fpath):
        node = _int(row[0], fpath, lineno)
        if not 0 <= node < n:
            raise UnknownNodeError(f"unknown node {node}", fpath, lineno)
        if features is None:
            features = np.zeros((n, len(row) - 1))
        if len(row) - 1 != features.shape[1]:
            raise RaggedRowError(f"expected {features.shape[1]} features, got {len(row) - 1}", fpath, lineno)
        try:
            vals = np.array([float(x) for x in row[1:]])
        except ValueError:
            raise BadValueError("unparseable feature value", fpath, lineno) from None
        if not np.all(np.isfinite(vals)):
            raise BadValueError("non-finite feature value", fpath, lineno)
        features[node] = vals
        seen[node] = True
    if features is None or not seen.all():
        missing = int(np.argmin(seen)) if features is not None else 0
        raise BadValueError(f"no feature row for node {missing}", fpath)

    epath = d / "edges.tsv"
    edges = []
    for lineno, row in _rows(epath):
        if len(row) != 2:
            raise RaggedRowError(f"expected 2 columns, got {len(row)}", epath, lineno)
        u, v = _int(row[0], epath, lineno), _int(row[1], epath, lineno)
        for node in (u, v):
            if not 0 <= node < n:
                raise UnknownNodeError(f"unknown node {node}", epath, lineno)
        edges.append((u, v))

    try:
        graph = build_graph(np.array(edges, dtype=np.int64).reshape(-1, 2), features, labels, num_classes)
    except GraphInputError as exc:
        raise BadValueError(str(exc), d) from exc
    name = meta.get("name", d.name)

    mpath = d / "masks.tsv"
    if mpath.exists():
        parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
        for lineno, row in _rows(mpath):
            if len(row) != 2:
                raise RaggedRowError(f"expected 2 columns, got {len(row)}", mpath, lineno)
            node = _int(row[0], mpath, lineno)
            if not 0 <= node < n:
                raise UnknownNodeError(f"unknown node {node}", mpath, lineno)
            if row[1] not in parts:
                raise BadValueError(f"split must be train, val or test, got {row[1]!r}", mpath, lineno)
            parts[row[1]].append(node)
        tr, va, te = (np.array(sorted(parts[k]), dtype=np.int64) for k in ("train", "val", "test"))
        return DatasetBundle(graph, tr, va, te, name, Provenance.FILE)
    return make_bundle(graph, name, seed, fractions, Provenance.FILE)


def save_native(bundle: DatasetBundle, directory: Path | str) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    with (d / "edges.tsv").open("w") as fh:
        for u, v in g.edge_list():
            fh.write(f"{u}\t{v}\n")
    with (d / "features.tsv").open("w") as fh:
        for i, row in enumerate(g.features):
            fh.write(str(i) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    with (d / "labels.tsv").open("w") as fh:
        for i, y in enumerate(g.labels):
            fh.write(f"{i}\t{y}\n")
    owner = {}
    for split_name, mask in (("train", bundle.train_mask), ("val", bundle.val_mask), ("test", bundle.test_mask)):
        for node in mask:
            owner[int(node)] = split_name
    with (d / "masks.tsv").open("w") as fh:
        for node in sorted(owner):
            fh.write(f"{node}\t{owner[node]}\n")
    (d / "meta.json").write_text(json.dumps({"name": bundle.name, "num_classes": g.num_classes}, indent=2) + "\n")
    return d


# ---------------------------------------------------------------------------
# Cora
# ---------------------------------------------------------------------------

@dataclass
class CoraMapping:
    """Dense index assignment for a Cora load: node index by file order, class index by first appearance."""

    paper_ids: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    dropped_citations: int = 0


def load_cora(content_path: Path | str, cites_path: Path | str, seed: int = 0,
              fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
              name: str = "cora") -> DatasetBundle:
    """Read ``cora.content`` (id, binary word flags, class name) and ``cora.cites`` (cited, citing)."""
    bundle, _ = load_cora_with_mapping(content_path, cites_path, seed, fractions, name)
    return bundle


def load_cora_with_mapping(content_path, cites_path, seed=0, fractions=DEFAULT_FRACTIONS, name="cora"):
    cpath, epath = Path(content_path), Path(cites_path)
    mapping = CoraMapping()
    index: dict[str, int] = {}
    class_index: dict[str, int] = {}
    rows, labels = [], []
    width = None
    for lineno, toks in _rows_ws(cpath):
        if width is None:
            width = len(toks)
            if width < 3:
                raise RaggedRowError("content rows need an id, features and a class", cpath, lineno)
        if len(toks) != width:
            raise RaggedRowError(f"expected {width} columns, got {len(toks)}", cpath, lineno)
        pid = toks[0]
        if pid in index:
            raise BadValueError(f"duplicate paper id {pid!r}", cpath, lineno)
        try:
            rows.append(np.array(toks[1:-1], dtype=np.float64))
        except ValueError:
            raise BadValueError("unparseable feature flag", cpath, lineno) from None
        index[pid] = len(mapping.paper_ids)
        mapping.paper_ids.append(pid)
        cls = toks[-1]
        if cls not in class_index:
            class_index[cls] = len(mapping.class_names)
            mapping.class_names.append(cls)
        labels.append(class_index[cls])
    if width is None:
        raise BadValueError("no content rows", cpath)

    edges = []
    for lineno, toks in _rows_ws(epath):
        if len(toks) != 2:
            raise RaggedRowError(f"expected 2 columns, got {len(toks)}", epath, lineno)
        cited, citing = toks
        if cited not in index or citing not in index:
            mapping.dropped_citations += 1
            continue
        edges.append((index[citing], index[cited]))
    if mapping.dropped_citations:
        logger.warning("dropped %d citations that reference unknown papers", mapping.dropped_citations)

    graph = build_graph(np.array(edges, dtype=np.int64).reshape(-1, 2), np.vstack(rows),
                        np.array(labels), len(mapping.class_names))
    return make_bundle(graph, name, seed, fractions, Provenance.FILE), mapping


def _rows_ws(path: Path):
    if not path.exists():
        raise MissingFileError("file not found", path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split()
            if toks:
                yield lineno, toks


def find_cora_files(directory: Path | str) -> tuple[Path, Path] | None:
    d = Path(directory)
    content, cites = d / "cora.content", d / "cora.cites"
    return (content, cites) if content.exists() and cites.exists() else None


def load_dataset(path: Path | str, seed: int = 0,
                 fractions: tuple[float, float, float] = DEFAULT_FRACTIONS) -> DatasetBundle:
    """Load a native directory or a directory holding ``cora.content``/``cora.cites``."""
    p = Path(path)
    if not p.is_dir():
        raise MissingFileError("dataset directory not found", p)
    cora = find_cora_files(p)
    if cora is not None:
        return load_cora(*cora, seed=seed, fractions=fractions, name=p.name or "cora")
    return load_native(p, seed=seed, fractions=fractions)
