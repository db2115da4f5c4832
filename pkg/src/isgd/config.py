"""Experiment configuration files (YAML).

Unknown keys are rejected with their full key path; syntax errors carry the
1-based line and column reported by the YAML parser.
"""
import difflib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .data import SynthSpec
from .errors import ConfigError
from .trainer import STRATEGIES, TrainConfig

DEFAULT_CONFIG = """\
# isgd experiment configuration.  Every key is optional except dataset.source
# and a strategy (either a top-level `strategy:` or a `cells:` list).

dataset:
  source: synthetic        # synthetic | idx
  generator: blobs         # Gaussian blobs on a circle (synthetic only)
  n: 1024
  dims: 2
  classes: 2
  noise: 1.0               # isotropic standard deviation
  radius: 3.0              # distance of class means from the origin
  hard_fraction: 0.0       # share of each class moved to a rare sub-cluster
  hard_distance: 2.0       # rare cluster sits opposite its class at this x radius
  proportions: null        # relative class sizes, e.g. [3, 1]; null = equal
  seed: 0
  # images: train-images-idx3-ubyte   (idx only, relative to this file)
  # labels: train-labels-idx1-ubyte

# One run per (cell, seed).  k <= 1 is the weight exponent in 1/(n p^k);
# smoothing is `adaptive` (half the running mean loss) or a constant such
# as 0.5, 1 or 2.5.
cells:
  - {strategy: uniform, k: 1.0, smoothing: adaptive}
  - {strategy: loss, k: 0.5, smoothing: adaptive}
seeds: [0, 1, 2]

train:
  iterations: 1000
  batch_size: 32
  pool_factor: 2.0         # pool of pool_factor * batch_size uniform draws
  ema_decay: 0.99
  max_loss_sweep_interval: 300
  history_window: 10       # losses per sample fed to the approximator
  weight_normalizer: pool  # pool | dataset
  record_time: true        # false leaves wall_ms empty (byte-stable CSVs)
  model:
    hidden: [32]
    dropout: 0.0
  optimizer:
    kind: adam             # adam | sgd
    lr: 0.001
    beta1: 0.9
    beta2: 0.999
    eps: 1.0e-8
    lr_decay_at: null      # iteration of a single step decay
    lr_decay_factor: 0.1
  approx:
    lr: null               # null = same as optimizer.lr
    hidden: 32
    embed_dim: 32

analysis:
  window: 50
  threshold: null          # batch-loss level for iterations-to-threshold

output_dir: runs           # overridden by $ISGD_OUTPUT_DIR
"""

OUTPUT_ENV = "ISGD_OUTPUT_DIR"


@dataclass
class Cell:
    strategy: str
    k: float = 0.5
    smoothing: object = "adaptive"

    @property
    def label(self):
        c = self.smoothing if self.smoothing == "adaptive" else f"{float(self.smoothing):g}"
        return f"{self.strategy}_k{self.k:g}_c{c}"


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    synth: SynthSpec = field(default_factory=SynthSpec)
    seed: int = 0
    images: Path = None
    labels: Path = None


@dataclass
class ExperimentSpec:
    dataset: DatasetSpec
    cells: list
    seeds: list
    train: TrainConfig
    output_dir: Path
    analysis_window: int = 50
    analysis_threshold: float = None

    def run_config(self, cell, seed):
        return replace(self.train, strategy=cell.strategy, k=cell.k, smoothing=cell.smoothing, seed=seed)


class _Reader:
    """Pulls typed values out of a nested mapping, tracking the key path."""

    def __init__(self, mapping, path):
        if mapping is None:
            mapping = {}
        if not isinstance(mapping, dict):
            raise ConfigError("expected a mapping", path or "<root>")
        self.mapping = mapping
        self.path = path
        self.used = set()

    def key(self, name):
        return f"{self.path}.{name}" if self.path else name

    def raw(self, name, default=None):
        self.used.add(name)
        return self.mapping.get(name, default)

    def get(self, name, kind, default, check=None, message=None):
        value = self.raw(name, default)
        if value is None:
            return None
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                out = value
            elif kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise TypeError
                out = int(float(value))
            else:
                out = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {kind.__name__}, got {value!r}", self.key(name)) from None
        if check is not None and not check(out):
            raise ConfigError(message or f"invalid value {value!r}", self.key(name))
        return out

    def child(self, name):
        return _Reader(self.raw(name), self.key(name))

    def finish(self, allowed=None):
        allowed = set(allowed or self.used)
        for name in self.mapping:
            if name not in allowed:
                hint = difflib.get_close_matches(str(name), sorted(allowed), n=1)
                suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
                raise ConfigError(f"unknown key {name!r}{suffix}", self.key(str(name)))


def _check_k(reader, name, default):
    return reader.get(
        name, float, default, lambda k: k <= 1.0,
        "bias exponent k must satisfy k <= 1 (weights 1/(n p^k) with k in (-inf, 1])",
    )


def _smoothing(reader, name):
    value = reader.raw(name, "adaptive")
    if value == "adaptive":
        return value
    try:
        c = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected 'adaptive' or a number, got {value!r}", reader.key(name)) from None
    if not c >= 0:
        raise ConfigError("smoothing constant must be >= 0", reader.key(name))
    return c


def _strategy(reader, name):
    value = reader.raw(name)
    if value not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {value!r}", reader.key(name))
    return value


def _dataset(reader, base_dir):
    source = reader.raw("source")
    if source not in ("synthetic", "idx"):
        raise ConfigError(f"source must be 'synthetic' or 'idx', got {source!r}", reader.key("source"))
    spec = DatasetSpec(source=source)
    spec.seed = reader.get("seed", int, 0)
    if source == "synthetic":
        gen = reader.raw("generator", "blobs")
        if gen != "blobs":
            raise ConfigError(f"unknown generator {gen!r}", reader.key("generator"))
        props = reader.raw("proportions")
        spec.synth = SynthSpec(
            n=reader.get("n", int, 1024),
            dims=reader.get("dims", int, 2),
            classes=reader.get("classes", int, 2),
            noise=reader.get("noise", float, 1.0),
            radius=reader.get("radius", float, 3.0),
            hard_fraction=reader.get("hard_fraction", float, 0.0),
            hard_distance=reader.get("hard_distance", float, 2.0),
            proportions=tuple(float(p) for p in props) if props is not None else None,
        )
        spec.synth.validate()
        reader.finish()
    else:
        for name in ("images", "labels"):
            value = reader.raw(name)
            if not value:
                raise ConfigError("path required for idx datasets", reader.key(name))
            setattr(spec, name, (base_dir / value).resolve())
        reader.finish()
    return spec


def _train(reader):
    pos = lambda v: v > 0  # noqa: E731
    t = TrainConfig(
        iterations=reader.get("iterations", int, 1000, lambda v: v >= 0, "must be >= 0"),
        batch_size=reader.get("batch_size", int, 32, lambda v: v >= 1, "must be >= 1"),
        pool_factor=reader.get("pool_factor", float, 2.0, lambda v: v >= 1, "must be >= 1"),
        ema_decay=reader.get("ema_decay", float, 0.99, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        max_loss_sweep_interval=reader.get("max_loss_sweep_interval", int, 300, pos, "must be >= 1"),
        history_window=reader.get("history_window", int, 10, pos, "must be >= 1"),
        weight_normalizer=reader.get(
            "weight_normalizer", str, "pool", lambda v: v in ("pool", "dataset"), "must be pool or dataset"
        ),
        record_time=reader.get("record_time", bool, True),
    )
    model = reader.child("model")
    t.hidden = tuple(int(h) for h in (model.raw("hidden", [32]) or []))
    if any(h < 1 for h in t.hidden):
        raise ConfigError("hidden widths must be >= 1", model.key("hidden"))
    t.dropout = model.get("dropout", float, 0.0, lambda v: 0 <= v < 1, "must lie in [0, 1)")
    model.finish()
    opt = reader.child("optimizer")
    t.optimizer = opt.get("kind", str, "adam", lambda v: v in ("adam", "sgd"), "must be adam or sgd")
    t.lr = opt.get("lr", float, 1e-3, pos, "must be > 0")
    t.beta1 = opt.get("beta1", float, 0.9, lambda v: 0 < v < 1, "must lie in (0, 1)")
    t.beta2 = opt.get("beta2", float, 0.999, lambda v: 0 < v < 1, "must lie in (0, 1)")
    t.eps = opt.get("eps", float, 1e-8, pos, "must be > 0")
    t.lr_decay_at = opt.get("lr_decay_at", int, None, lambda v: v >= 0, "must be >= 0")
    t.lr_decay_factor = opt.get("lr_decay_factor", float, 0.1, pos, "must be > 0")
    opt.finish()
    approx = reader.child("approx")
    t.approx_lr = approx.get("lr", float, None, pos, "must be > 0")
    t.approx_hidden = approx.get("hidden", int, 32, pos, "must be >= 1")
    t.approx_embed = approx.get("embed_dim", int, 32, pos, "must be >= 1")
    approx.finish()
    reader.finish()
    return t


def parse_config_text(text, base_dir=".", source="<config>"):
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(
            f"{source}: {exc.problem or exc}",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        ) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    base_dir = Path(base_dir)
    root = _Reader(doc, "")
    if "dataset" not in root.mapping:
        raise ConfigError("missing required section", "dataset")
    dataset = _dataset(root.child("dataset"), base_dir)
    train = _train(root.child("train"))

    if "cells" in root.mapping:
        raw_cells = root.raw("cells")
        if not isinstance(raw_cells, list) or not raw_cells:
            raise ConfigError("expected a non-empty list", "cells")
        cells = []
        for i, item in enumerate(raw_cells):
            r = _Reader(item, f"cells[{i}]")
            cells.append(Cell(_strategy(r, "strategy"), _check_k(r, "k", 0.5), _smoothing(r, "smoothing")))
            r.finish()
        for name in ("strategy", "k", "smoothing"):
            if name in root.mapping:
                raise ConfigError("give either top-level strategy settings or cells, not both", name)
    else:
        if "strategy" not in root.mapping:
            raise ConfigError("missing strategy (or a cells list)", "strategy")
        cells = [Cell(_strategy(root, "strategy"), _check_k(root, "k", 0.5), _smoothing(root, "smoothing"))]

    seeds = root.raw("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("expected a non-empty list of integers", "seeds")
    analysis = root.child("analysis")
    window = analysis.get("window", int, 50, lambda v: v >= 1, "must be >= 1")
    threshold = analysis.get("threshold", float, None)
    analysis.finish()
    out = root.get("output_dir", str, "runs")
    root.finish()
    output_dir = Path(os.environ.get(OUTPUT_ENV) or (base_dir / out))
    return ExperimentSpec(dataset, cells, seeds, train, output_dir, window, threshold)


def parse_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent, source=str(path))
