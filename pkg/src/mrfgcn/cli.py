"""Command-line front end.

Subcommands: train, evaluate, homophily, oracle-check, ablate, synth.
Run settings come from an optional key=value config file plus flags;
flags win. Exit codes: 0 success, 1 configuration error, 2 runtime
failure, 3 self-check failure.
"""

import argparse
import dataclasses
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, Split, generate_synthetic, load_dataset,
                   load_split_file, planetoid_split, ratio_split,
                   row_normalize_features, save_generic)
from .errors import ConfigError, EnumerationLimitError
from .factors import PairwiseParams
from .gcn import forward
from .graph import homophily_beta, normalized_adjacency_operator
from .oracle import OracleLimit
from .selfcheck import run_selfchecks
from .training import (Proposal, TrainConfig, evaluate, predict, train)

_SPLIT_KINDS = ("planetoid", "ratio", "file")


@dataclass
class RunConfig:
    dataset: str = ""
    split: str = "planetoid"
    per_class: int = 20
    num_val: int = 500
    num_test: int = 1000
    train_frac: float = 0.2
    val_frac: float = 0.2
    test_frac: float = 0.6
    split_seed: int = 0
    resplit_per_seed: bool = True
    row_normalize: bool = True
    seeds: tuple = (0,)
    out: str = "runs"
    quiet: bool = False
    hidden: int = 16
    dropout_keep: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    warm_epochs: int = 200
    patience: int = 50
    em_rounds: int = 5
    e_sweeps: int = 10
    e_tolerance: float = 1e-4
    m_epochs: int = 50
    redistribution: str = "average"
    coefficient_mode: str = "edge"
    alpha_init: float = 1.0

    def __post_init__(self):
        if self.split not in _SPLIT_KINDS:
            raise ConfigError(f"split must be one of {_SPLIT_KINDS}, got {self.split!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def train_config(self, seed) -> TrainConfig:
        keep = {f.name for f in fields(TrainConfig)}
        kwargs = {f.name: getattr(self, f.name) for f in fields(self) if f.name in keep}
        kwargs["seed"] = seed
        return TrainConfig(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if f.name == "seeds":
                value = ",".join(str(s) for s in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        values = dataclasses.asdict(base) if base is not None else {}
        types = {f.name: f for f in fields(cls)}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {line_no}: expected `key = value`")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in types:
                raise ConfigError(f"config line {line_no}: unknown key {key!r}")
            values[key] = _parse_value(types[key], value)
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _parse_value(f, text):
    if f.name == "seeds":
        return tuple(int(s) for s in text.split(",") if s.strip())
    if f.type in ("int", int):
        return int(text)
    if f.type in ("float", float):
        return float(text)
    if f.type in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean value {text!r} for {f.name}")
    return text


def _make_split(ds: Dataset, cfg: RunConfig, seed) -> Split:
    split_seed = seed if cfg.resplit_per_seed else cfg.split_seed
    if cfg.split == "planetoid":
        return planetoid_split(ds, cfg.per_class, cfg.num_val, cfg.num_test,
                               seed=split_seed)
    if cfg.split == "ratio":
        return ratio_split(ds, cfg.train_frac, cfg.val_frac, cfg.test_frac,
                           seed=split_seed)
    path = Path(cfg.dataset) / "split.tsv"
    if not path.exists():
        raise ConfigError(f"--split file requires {path}")
    return load_split_file(path, num_nodes=ds.graph.num_nodes)


def _load_prepared(cfg: RunConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("missing required setting: dataset")
    ds = load_dataset(cfg.dataset)
    return row_normalize_features(ds) if cfg.row_normalize else ds


def _say(cfg, *parts):
    if not cfg.quiet:
        print(*parts)


def _aggregate_lines(rows):
    accs = np.array([acc for _, acc in rows])
    lines = ["seed\ttest_accuracy"]
    lines += [f"{seed}\t{acc!r}" for seed, acc in rows]
    lines.append(f"mean\t{float(accs.mean())!r}")
    lines.append(f"stddev\t{float(accs.std(ddof=0))!r}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg: RunConfig) -> int:
    ds = _load_prepared(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(cfg.to_text(), encoding="utf-8")
    rows = []
    for seed in cfg.seeds:
        split = _make_split(ds, cfg, seed)
        result = train(ds, split, cfg.train_config(seed))
        result.report.write(out / f"report_seed{seed}.txt")
        save_checkpoint(out / f"checkpoint_seed{seed}.bin",
                        result.params, result.pairwise)
        rows.append((seed, result.report.test_accuracy))
        _say(cfg, f"seed {seed}: test accuracy {result.report.test_accuracy:.4f} "
                  f"(best phase {result.report.best_phase})")
    (out / "aggregate.tsv").write_text(_aggregate_lines(rows), encoding="utf-8")
    accs = [acc for _, acc in rows]
    _say(cfg, f"mean test accuracy over {len(accs)} seed(s): {np.mean(accs):.4f} "
              f"+/- {np.std(accs):.4f}")
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint_path) -> int:
    ds = _load_prepared(cfg)
    split = _make_split(ds, cfg, cfg.seeds[0])
    params, pp = load_checkpoint(checkpoint_path)
    if pp is None:
        pp = PairwiseParams.init(ds.num_classes, ds.graph.num_edges, mode="none")
    scores, _ = forward(params, ds.features, normalized_adjacency_operator(ds.graph))
    unlabeled = np.setdiff1d(np.arange(ds.graph.num_nodes), split.train)
    q = Proposal.from_scores(scores, unlabeled, ds.graph.num_nodes)
    predictions = predict(scores, pp, q, ds.graph, ds.labels, split.train)
    for name, ids in (("val", split.val), ("test", split.test)):
        if len(ids):
            print(f"{name} accuracy: {evaluate(predictions, ds.labels, ids):.4f}")
    return 0


def cmd_homophily(cfg: RunConfig) -> int:
    ds = _load_prepared(cfg)
    print(f"nodes: {ds.graph.num_nodes}")
    print(f"edges (unique undirected): {ds.graph.num_edges}")
    if ds.num_citation_rows is not None:
        print(f"citation rows: {ds.num_citation_rows}")
    print(f"features: {ds.num_features}")
    print(f"classes: {ds.num_classes}")
    print(f"homophily beta: {homophily_beta(ds.graph, ds.labels):.4f}")
    return 0


def cmd_oracle_check(sizes, trials, seed, num_classes, max_configs,
                     inject_gradient_bug=False) -> int:
    try:
        results = run_selfchecks(sizes, trials, seed, num_classes=num_classes,
                                 limit=OracleLimit(max_configs),
                                 inject_gradient_bug=inject_gradient_bug)
    except EnumerationLimitError as exc:
        print(f"refused: {exc}")
        return 1
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  worst {r.worst:.3e}  tol {r.threshold:.0e}  {status}")
        ok &= r.passed
    return 0 if ok else 3


def cmd_ablate(cfg: RunConfig) -> int:
    ds = _load_prepared(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["coefficient\tredistribution\tmean\tstddev\tper_seed"]
    for mode in ("none", "layer", "edge"):
        for scheme in ("average", "center"):
            accs = []
            for seed in cfg.seeds:
                split = _make_split(ds, cfg, seed)
                tc = dataclasses.replace(cfg.train_config(seed),
                                         coefficient_mode=mode, redistribution=scheme)
                accs.append(train(ds, split, tc).report.test_accuracy)
            accs = np.array(accs)
            per_seed = ",".join(repr(a) for a in accs.tolist())
            lines.append(f"{mode}\t{scheme}\t{accs.mean()!r}\t{accs.std(ddof=0)!r}"
                         f"\t{per_seed}")
            _say(cfg, f"{mode:<6} {scheme:<8} mean {accs.mean():.4f} "
                      f"+/- {accs.std(ddof=0):.4f}")
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_synth(out_dir, num_nodes, num_classes, edges_per_node, target,
              feature_dim, noise, seed) -> int:
    ds = generate_synthetic(num_nodes, num_classes, edges_per_node, target,
                            feature_dim, noise, seed)
    save_generic(ds, out_dir)
    beta = homophily_beta(ds.graph, ds.labels) if ds.graph.num_edges else float("nan")
    print(f"wrote {out_dir}: {ds.graph.num_nodes} nodes, {ds.graph.num_edges} edges, "
          f"beta {beta:.4f}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_run_flags(p):
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--dataset", help="dataset directory or .content file")
    p.add_argument("--split", choices=_SPLIT_KINDS)
    p.add_argument("--seeds", help="comma-separated list, e.g. 0,1,2")
    p.add_argument("--out", help="output directory")
    p.add_argument("--coeff", choices=("none", "layer", "edge"),
                   dest="coefficient_mode")
    p.add_argument("--redist", choices=("average", "center"), dest="redistribution")
    p.add_argument("--em-rounds", type=int, dest="em_rounds")
    p.add_argument("--warm-epochs", type=int, dest="warm_epochs")
    p.add_argument("--m-epochs", type=int, dest="m_epochs")
    p.add_argument("--e-sweeps", type=int, dest="e_sweeps")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha-init", type=float, dest="alpha_init")
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--num-val", type=int, dest="num_val")
    p.add_argument("--num-test", type=int, dest="num_test")
    p.add_argument("--patience", type=int)
    p.add_argument("--fixed-split", action="store_true",
                   help="reuse one split (seeded by split_seed) for every run seed")
    p.add_argument("--no-row-normalize", action="store_true")
    p.add_argument("--quiet", action="store_true")


def _build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("dataset", "split", "out", "coefficient_mode", "redistribution",
                 "em_rounds", "warm_epochs", "m_epochs", "e_sweeps", "hidden",
                 "lr", "alpha_init", "per_class", "num_val", "num_test", "patience"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.fixed_split:
        overrides["resplit_per_seed"] = False
    if args.no_row_normalize:
        overrides["row_normalize"] = False
    if args.quiet:
        overrides["quiet"] = True
    return dataclasses.replace(cfg, **overrides)


def main(argv=None) -> int:
    parser = _Parser(prog="mrfgcn")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "ablate"):
        _add_run_flags(sub.add_parser(name))

    p_eval = sub.add_parser("evaluate")
    _add_run_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)

    p_homo = sub.add_parser("homophily")
    _add_run_flags(p_homo)

    p_oracle = sub.add_parser("oracle-check")
    p_oracle.add_argument("--sizes", default="4,6,8",
                          help="comma-separated instance node counts")
    p_oracle.add_argument("--trials", type=int, default=20)
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--classes", type=int, default=3)
    p_oracle.add_argument("--max-configs", type=int, default=OracleLimit().max_configurations)
    p_oracle.add_argument("--inject-gradient-bug", action="store_true",
                          help=argparse.SUPPRESS)

    p_synth = sub.add_parser("synth")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--nodes", type=int, default=1000)
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--edges-per-node", type=int, default=4)
    p_synth.add_argument("--target", type=float, default=0.5,
                         help="homophily target in [0, 1]")
    p_synth.add_argument("--feature-dim", type=int, default=16)
    p_synth.add_argument("--noise", type=float, default=0.2)
    p_synth.add_argument("--seed", type=int, default=0)

    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return cmd_train(_build_config(args))
        if args.command == "ablate":
            return cmd_ablate(_build_config(args))
        if args.command == "evaluate":
            return cmd_evaluate(_build_config(args), args.checkpoint)
        if args.command == "homophily":
            return cmd_homophily(_build_config(args))
        if args.command == "oracle-check":
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
            return cmd_oracle_check(sizes, args.trials, args.seed, args.classes,
                                    args.max_configs, args.inject_gradient_bug)
        if args.command == "synth":
            return cmd_synth(args.out, args.nodes, args.classes, args.edges_per_node,
                             args.target, args.feature_dim, args.noise, args.seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
