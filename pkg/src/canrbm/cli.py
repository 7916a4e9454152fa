"""``canrbm`` command line: preprocess, train, generate, similarity, ids-eval, fixtures.

Settings come from an optional JSON config file (``--config``) and flag
overrides; flags win. The resolved configuration is hashed together with the
contents of every input file, and that hash plus the seed is written into each
artifact, next to a ``<command>.config.json`` copy of the resolved settings.
Output never contains wall-clock times, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .codec import (DEFAULT_SCALE_FACTOR, AttackType, Mode, ParseReport, load_dataset, parse_hcrl_csv, preprocess,
                    save_dataset, write_hcrl_csv)
from .errors import (CanRbmError, ConfigError, DatasetFormatError, DimensionError, InvalidFrameError,
                     ModelFormatError, OrderingError, ParseError)
from .fixtures import fixture_log, fixture_manifest
from .generator import (GenerationConfig, OutputMode, check_mode, frames_to_full96, generate_frames, manifest_line,
                        read_generated_csv, write_generated_csv)
from .ids import ClassifierConfig, SplitSpec, augmentation_experiment, training_attack_data
from .metrics import PairingStrategy, SimilarityReport, dataset_similarity_report
from .rbm import ModelMeta, TrainConfig, init_rbm, read_model, save_model, train_cd
from .windows import CLASSES, WindowLabel, export_window_images

logger = logging.getLogger("canrbm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_DIMENSION = 5
EXIT_DATA = 6

HIDDEN_PRESET = {Mode.DOS16: 8, Mode.FULL96: 32}
FIXTURE_FILES = {label: f"{label.value}.csv" for label in CLASSES}


@dataclass(frozen=True)
class FixtureSettings:
    attack_frames: int = 5400
    normal_frames: int = 108_000
    rate: float | None = None


@dataclass(frozen=True)
class PipelineConfig:
    input: str | None = None
    reference: str | None = None
    output_dir: str = "out"
    attack_type: str | None = None
    scale_factor: int = DEFAULT_SCALE_FACTOR
    seed: int = 0
    strict_parse: bool = False
    kh: int | None = None  # None selects the preset for the attack's encoding
    export_images: bool = False
    train: TrainConfig = TrainConfig()
    generate: GenerationConfig = GenerationConfig()
    split: SplitSpec = SplitSpec()
    classifier: ClassifierConfig = ClassifierConfig()
    fixtures: FixtureSettings = FixtureSettings()

    @property
    def attack(self) -> AttackType:
        if self.attack_type is None:
            raise ConfigError("this command needs --attack-type")
        return AttackType(self.attack_type)

    @property
    def hidden_units(self) -> int:
        return self.kh if self.kh is not None else HIDDEN_PRESET[self.attack.mode]

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def generation_config(self) -> GenerationConfig:
        return replace(self.generate, seed=self.seed)

    def split_spec(self) -> SplitSpec:
        return replace(self.split, seed=self.seed)

    def classifier_config(self) -> ClassifierConfig:
        return replace(self.classifier, seed=self.seed)

    def to_dict(self) -> dict:
        def plain(value):
            if dataclasses.is_dataclass(value):
                return {f.name: plain(getattr(value, f.name)) for f in dataclasses.fields(value)
                        if f.name != "seed"}
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            return getattr(value, "value", value)

        return {f.name: plain(getattr(self, f.name)) for f in dataclasses.fields(self)}


_SECTIONS = {"train": TrainConfig, "generate": GenerationConfig, "split": SplitSpec,
             "classifier": ClassifierConfig, "fixtures": FixtureSettings}


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - {"seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))} (the global 'seed' applies)")
    values = dict(raw)
    try:
        if "output_mode" in values:
            values["output_mode"] = OutputMode(values["output_mode"])
        for key in ("normal", "abnormal"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {k: (_section(_SECTIONS[k], v, k) if k in _SECTIONS else v) for k, v in raw.items()}
    try:
        config = PipelineConfig(**values)
        _validate(config)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def _validate(config: PipelineConfig) -> None:
    if config.attack_type is not None:
        AttackType(config.attack_type)
    if not isinstance(config.scale_factor, int) or config.scale_factor < 1:
        raise ConfigError("scale_factor must be a positive integer")
    if config.kh is not None and config.kh < 1:
        raise ConfigError("kh must be positive")
    if config.fixtures.attack_frames < 1 or config.fixtures.normal_frames < 1:
        raise ConfigError("fixture frame counts must be positive")


# --------------------------------------------------------------------------- argument handling

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="canrbm", description="RBM-based CAN attack-frame generation pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "preprocess": "encode the injected frames of a CSV log into a dataset file",
        "train": "train an RBM on a dataset file (or a raw log)",
        "generate": "sample frames from a trained model",
        "similarity": "compare generated frames with real ones",
        "ids-eval": "before/after augmentation experiment on five class logs",
        "fixtures": "write synthetic normal and attack logs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--input", help="primary input (log, dataset, model, generated CSV or log directory)")
        p.add_argument("--reference", help="reference log or dataset for similarity")
        p.add_argument("--output-dir", help="directory for artifacts")
        p.add_argument("--attack-type", choices=[a.value for a in AttackType])
        p.add_argument("--scale-factor", type=int)
        p.add_argument("--epochs", type=int, help="RBM training epochs")
        p.add_argument("--lr", type=float, help="RBM learning rate")
        p.add_argument("--cd-k", type=int)
        p.add_argument("--kh", type=int, help="hidden units (default: preset for the attack type)")
        p.add_argument("--count", type=int, help="frames to generate")
        p.add_argument("--gibbs-iters", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--strict-parse", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--export-images", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
    config = config_from_dict(raw)
    top = {k: getattr(args, k) for k in ("input", "reference", "output_dir", "attack_type", "scale_factor",
                                          "seed", "strict_parse", "kh", "export_images")}
    train = {"epochs": args.epochs, "eta": args.lr, "cd_k": args.cd_k}
    gen = {"count": args.count, "gibbs_iters": args.gibbs_iters, "workers": args.workers}
    try:
        config = replace(
            config,
            **{k: v for k, v in top.items() if v is not None},
            train=replace(config.train, **{k: v for k, v in train.items() if v is not None}),
            generate=replace(config.generate, **{k: v for k, v in gen.items() if v is not None}),
        )
        _validate(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


# --------------------------------------------------------------------------- provenance

def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_digest(path_str: str | None) -> str | None:
    if path_str is None:
        return None
    path = Path(path_str)
    if path.is_dir():
        digest = hashlib.sha256()
        for name in sorted(FIXTURE_FILES.values()):
            digest.update(name.encode() + b"\0" + _file_digest(path / name).encode())
        return digest.hexdigest()
    return _file_digest(path)


def config_hash(command: str, config: PipelineConfig) -> str:
    """Digest of the command, the resolved settings and the input contents (paths and output_dir excluded)."""
    payload = config.to_dict()
    for key in ("output_dir", "input", "reference"):
        payload.pop(key)
    payload["seed"] = config.seed
    payload["command"] = command
    payload["input_sha256"] = _input_digest(config.input)
    payload["reference_sha256"] = _input_digest(config.reference)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class Run:
    """Output directory plus the provenance stamp shared by every artifact of one command."""

    def __init__(self, command: str, config: PipelineConfig):
        self.command = command
        self.config = config
        self.hash = config_hash(command, config)
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    @property
    def stamp(self) -> str:
        return f"config={self.hash} seed={self.config.seed}"

    def write(self, name: str, data: bytes | str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)
        self.written.append(path)
        return path

    def finish(self) -> None:
        record = {"command": self.command, "config_hash": self.hash, "config": self.config.to_dict(),
                  "seed": self.config.seed}
        self.write(f"{self.command}.config.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
        for path in self.written:
            print(path)


def _require_input(config: PipelineConfig, what: str) -> Path:
    if config.input is None:
        raise ConfigError(f"this command needs --input ({what})")
    path = Path(config.input)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _read_log(path: Path, strict: bool):
    report = ParseReport()
    frames = parse_hcrl_csv(path.read_bytes(), strict=strict, report=report)
    for issue in report.issues[:10]:
        logger.warning("%s: skipped line %d: %s", path, issue.line_no, issue.reason)
    if len(report.issues) > 10:
        logger.warning("%s: %d malformed lines skipped in total", path, len(report.issues))
    return frames


def _load_dataset_or_log(path: Path, config: PipelineConfig):
    """Accept either a dataset file or a raw log (preprocessed on the fly with the configured attack type)."""
    raw = path.read_bytes()
    if raw.startswith(b"CANRBM-DATASET"):
        dataset, _ = load_dataset(raw)
        if config.attack_type is not None and dataset.attack_type is not config.attack:
            raise DimensionError(f"dataset holds {dataset.attack_type.value} frames ({dataset.mode.value}), "
                                 f"config selects {config.attack.value} ({config.attack.mode.value})")
        return dataset
    return preprocess(_read_log(path, config.strict_parse), config.attack, config.scale_factor)


# --------------------------------------------------------------------------- commands

def cmd_preprocess(config: PipelineConfig) -> None:
    path = _require_input(config, "CSV log")
    attack = config.attack
    run = Run("preprocess", config)
    dataset = preprocess(_read_log(path, config.strict_parse), attack, config.scale_factor)
    if len(dataset) == 0:
        logger.warning("%s: no injected frames with dlc 8", path)
    run.write(f"{attack.value}.dataset", save_dataset(dataset, [run.stamp]))
    run.finish()


def cmd_train(config: PipelineConfig) -> None:
    path = _require_input(config, "dataset file or CSV log")
    dataset = _load_dataset_or_log(path, config)
    config = replace(config, attack_type=dataset.attack_type.value)
    if config.scale_factor != dataset.scale_factor:
        raise ConfigError(f"dataset was encoded with scale_factor {dataset.scale_factor}, "
                          f"config says {config.scale_factor}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty; nothing to train on")
    run = Run("train", config)
    train_config = config.train_config()
    model = init_rbm(dataset.mode.width, config.hidden_units, train_config.seed, train_config.init_sigma)
    report = train_cd(model, dataset.matrix, train_config)
    meta = ModelMeta.for_attack(dataset.attack_type, dataset.scale_factor, [run.stamp])
    run.write(f"{dataset.attack_type.value}.model", save_model(model, meta))
    rows = [f"# {run.stamp}", "epoch\treconstruction_error"]
    rows += [f"{i}\t{err:.6f}" for i, err in enumerate(report.reconstruction_error, start=1)]
    run.write(f"{dataset.attack_type.value}.train.tsv", "\n".join(rows) + "\n")
    run.finish()


def cmd_generate(config: PipelineConfig) -> None:
    path = _require_input(config, "model file")
    model, meta = read_model(path)
    if meta.attack_type is None:
        if config.attack_type is None:
            raise ConfigError("model file does not name its attack type; pass --attack-type")
        attack = config.attack
    else:
        attack = meta.attack_type
        if config.attack_type is not None and config.attack is not attack:
            raise DimensionError(f"model is a {attack.value} model, config selects {config.attack_type}")
    check_mode(model, attack)
    config = replace(config, attack_type=attack.value, scale_factor=meta.scale_factor)
    run = Run("generate", config)
    gen = config.generation_config()
    frames = generate_frames(model, gen, meta.scale_factor)
    buf = io.StringIO()
    write_generated_csv(frames, buf)
    run.write(f"{attack.value}.generated.csv", buf.getvalue())
    run.write(f"{attack.value}.generated.manifest",
              manifest_line(model, gen, meta.scale_factor, attack_type=attack.value, config_hash=run.hash) + "\n")
    run.finish()


def cmd_similarity(config: PipelineConfig) -> None:
    path = _require_input(config, "generated CSV")
    if config.reference is None:
        raise ConfigError("similarity needs --reference (log or dataset of real frames)")
    ref_path = Path(config.reference)
    if not ref_path.exists():
        raise FileNotFoundError(f"reference not found: {ref_path}")
    reference = _load_dataset_or_log(ref_path, config)
    attack = reference.attack_type
    config = replace(config, attack_type=attack.value)
    with path.open(encoding="utf-8") as fh:
        generated = read_generated_csv(fh, attack.mode)
    if not generated:
        raise ValueError(f"{path}: no generated frames")
    gen_matrix = frames_to_full96(generated)
    if attack.mode is Mode.DOS16:
        gen_matrix = gen_matrix[:, :16]
    if len(reference) == 0:
        raise ValueError(f"{ref_path}: no reference frames")
    run = Run("similarity", config)
    lines = [f"# {run.stamp} attack_type={attack.value}", "\t".join(SimilarityReport.TSV_HEADER)]
    for strategy in PairingStrategy:
        report = dataset_similarity_report(gen_matrix, reference.matrix, strategy, seed=config.seed)
        lines.append(report.tsv_row())
    run.write(f"{attack.value}.similarity.tsv", "\n".join(lines) + "\n")
    run.finish()


def cmd_ids_eval(config: PipelineConfig) -> None:
    directory = _require_input(config, f"directory with {', '.join(FIXTURE_FILES.values())}")
    if not directory.is_dir():
        raise ConfigError("ids-eval --input must be a directory of class logs")
    source = {}
    for label, name in FIXTURE_FILES.items():
        if not (directory / name).exists():
            raise FileNotFoundError(f"missing class log {directory / name}")
        source[label] = _read_log(directory / name, config.strict_parse)
    run = Run("ids-eval", config)
    train_config = config.train_config()
    models = {}

    def fit(split):
        for label in CLASSES[1:]:
            attack = AttackType(label.value)
            data = training_attack_data(source[label], split, attack, config.scale_factor)
            if len(data) == 0:
                raise ValueError(f"no injected {attack.value} frames in the training partition")
            kh = config.kh if config.kh is not None else HIDDEN_PRESET[attack.mode]
            model = init_rbm(attack.mode.width, kh, train_config.seed, train_config.init_sigma)
            train_cd(model, data.matrix, train_config)
            models[attack] = model
        return models

    result = augmentation_experiment(source, fit, config.split_spec(), config.generation_config(),
                                     config.classifier_config(), config.scale_factor)
    for attack, model in models.items():
        meta = ModelMeta.for_attack(attack, config.scale_factor, [run.stamp])
        run.write(f"models/{attack.value}.model", save_model(model, meta))
    run.write("comparison.tsv", f"# {run.stamp}\n" + result.tsv())
    manifest = [f"# {run.stamp}", "partition\twindow_index\tlabel"]
    for name in ("train", "validation", "test"):
        manifest += [f"{name}\t{idx}\t{w.label.value}"
                     for idx, w in zip(result.split.indices[name], getattr(result.split, name))]
    run.write("split_manifest.tsv", "\n".join(manifest) + "\n")
    hashes = [f"# {run.stamp}", "partition\tbefore_sha256\tafter_sha256"]
    before, after = result.meta["hashes_before"], result.meta["hashes_after"]
    hashes += [f"{k}\t{before[k]}\t{after[k]}" for k in ("train", "validation", "test")]
    run.write("partition_hashes.tsv", "\n".join(hashes) + "\n")
    if config.export_images:
        windows = result.split.train + result.split.validation + result.split.test
        run.written += export_window_images(windows, run.out / "windows")
    run.finish()


def cmd_fixtures(config: PipelineConfig) -> None:
    run = Run("fixtures", config)
    settings = config.fixtures
    for index, label in enumerate(CLASSES):
        attack = None if label is WindowLabel.NORMAL else AttackType(label.value)
        n = settings.normal_frames if attack is None else settings.attack_frames
        frames = fixture_log(attack, n, seed=config.seed * 100 + index, rate=settings.rate if attack else None)
        buf = io.StringIO()
        write_hcrl_csv(frames, buf)
        run.write(FIXTURE_FILES[label], buf.getvalue())
    manifest = {"provenance": run.stamp, **fixture_manifest(),
                "files": {label.value: FIXTURE_FILES[label] for label in CLASSES}}
    run.write("fixtures_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    run.finish()


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "similarity": cmd_similarity,
    "ids-eval": cmd_ids_eval,
    "fixtures": cmd_fixtures,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ParseError, OrderingError, InvalidFrameError, ModelFormatError, DatasetFormatError)):
        return EXIT_FORMAT
    if isinstance(exc, DimensionError):
        return EXIT_DIMENSION
    return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        COMMANDS[args.command](config)
    except (CanRbmError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        category = {EXIT_CONFIG: "config", EXIT_IO: "io", EXIT_FORMAT: "format",
                    EXIT_DIMENSION: "dimension", EXIT_DATA: "data"}[code]
        print(f"canrbm {args.command}: {category} error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK
