"""Command-line entry point: one subcommand per pipeline stage.

Every output file gets a ``<output>.manifest.json`` next to it recording the
resolved configuration, its hash, the seeds, and SHA-256 hashes of every
input and output.  Paths in manifests are relative to the working
directory and no timestamps are written, so identical runs produce
identical bytes.

Errors are reported on stderr as one JSON object ``{"error", "exit",
"message"}`` and mapped to exit codes: 2 usage, 3 motion, 4 decomposition,
5 tokenizer, 6 alignment, 7 generative, 8 atomizer, 9 metrics/config.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, align, generative, llm, matfile, rvq
from .decompose import DEFAULT_PERIODS, DEFAULT_THRESHOLDS, ConversionThresholds, calibrate_thresholds, decompose
from .errors import AtomotionError, ConfigError
from .metrics import diversity, fid, r_precision
from .motion import BODY_PARTS, MotionDataset, MotionItem, MotionSequence, read_motion, save_motion

_LOG = logging.getLogger("atomotion")

SEEDED = {"tokenize-train", "align-train", "generate", "metrics"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path.cwd().resolve())).as_posix()


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file not found: {path}")
    return p


def _write_text(path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return p


def _write_bytes(path, data: bytes) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        fh.write(data)
    return p


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _float_list(values) -> list:
    return [float(v) for v in values]


class Run:
    """Collects inputs and outputs of one invocation, then writes manifests."""

    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def input(self, path) -> Path:
        p = _require_file(path)
        if p not in self.inputs:
            self.inputs.append(p)
        return p

    def output(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def write_manifests(self) -> None:
        config_json = json.dumps(self.config, sort_keys=True)
        base = {
            "command": self.command,
            "config": self.config,
            "config_sha256": hashlib.sha256(config_json.encode("utf-8")).hexdigest(),
            "seeds": {k: v for k, v in sorted(self.config.items()) if k.endswith("seed")},
            "inputs": {_rel(p): sha256_file(p) for p in self.inputs},
            "outputs": {_rel(p): sha256_file(p) for p in self.outputs},
            "versions": {
                "atomotion": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
        }
        for p in self.outputs:
            _write_text(f"{p}.manifest.json", _dump_json({"output": _rel(p), **base}))


def load_dataset(run: Run, path) -> tuple[list[str], MotionDataset]:
    """Dataset file: {"items": [{"id", "text", "motion"}]}, motion paths relative to the file."""
    p = run.input(path)
    with open(p, encoding="utf-8") as fh:
        doc = json.load(fh)
    ids, items = [], []
    for entry in doc.get("items", []):
        mp = run.input(p.parent / entry["motion"])
        ids.append(entry["id"])
        items.append(MotionItem(read_motion(mp), entry.get("text")))
    if not items:
        raise ConfigError(f"{path}: dataset has no items")
    return ids, MotionDataset(tuple(items))


def _load_thresholds(run: Run, path) -> ConversionThresholds:
    if path is None:
        return DEFAULT_THRESHOLDS
    with open(run.input(path), encoding="utf-8") as fh:
        return ConversionThresholds.from_dict(json.load(fh))


def _dataset_batch(run: Run, args) -> tuple[list[str], align.FeatureBatch]:
    ids, ds = load_dataset(run, args.dataset)
    texts = [it.raw_text or "" for it in ds]
    T = np.stack([align.text_features(t, args.text_dim) for t in texts])
    M = np.stack([align.motion_features(it.motion, args.ratio) for it in ds])
    return ids, align.FeatureBatch(T, M)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_decompose(run: Run, args) -> None:
    motion = read_motion(run.input(args.input))
    thresholds = _load_thresholds(run, args.thresholds)
    desc = decompose(motion, thresholds=thresholds, periods=args.periods)
    run.output(_write_text(args.output, _dump_json(desc.to_dict())))


def cmd_calibrate(run: Run, args) -> None:
    _, ds = load_dataset(run, args.dataset)
    th = calibrate_thresholds(ds)
    run.output(_write_text(args.output, _dump_json(th.to_dict())))


def cmd_tokenize_train(run: Run, args) -> None:
    _, ds = load_dataset(run, args.dataset)
    feats = np.vstack([rvq.featurize(m, args.ratio) for m in ds.motions()])
    model = rvq.train_codebooks(feats, args.codebook_size, args.residual_layers, args.iters, args.seed, args.ratio)
    run.output(_write_bytes(args.output, model.to_bytes()))


def cmd_tokenize(run: Run, args) -> None:
    model = rvq.RVQModel.load(run.input(args.model))
    motion = read_motion(run.input(args.input))
    tokens = rvq.encode(model, rvq.featurize(motion, model.ratio))
    run.output(_write_text(args.output, tokens.to_csv()))


def cmd_detokenize(run: Run, args) -> None:
    model = rvq.RVQModel.load(run.input(args.model))
    with open(run.input(args.input), encoding="utf-8") as fh:
        tokens = rvq.TokenSequence.from_csv(fh.read())
    rows = rvq.decode(model, tokens)
    run.output(_write_bytes(args.output, matfile.dumps({"features": rows}, {"kind": "features", "space": "rvq"})))


def cmd_align_train(run: Run, args) -> None:
    _, batch = _dataset_batch(run, args)
    model = align.AlignmentModel.init(batch.text_features.shape[1], batch.motion_features.shape[1],
                                      args.embed_dim, args.temperature, args.seed)
    model, history = align.fit(model, batch, args.steps, args.lr)
    run.output(_write_bytes(args.output, model.to_bytes()))
    if args.history:
        run.output(_write_text(args.history, _dump_json({"loss": _float_list(history)})))


def cmd_align_eval(run: Run, args) -> None:
    model = align.AlignmentModel.load(run.input(args.model))
    ids, batch = _dataset_batch(run, args)
    U = align.embed_motion(model, batch.motion_features)
    V = align.embed_text(model, batch.text_features)
    S = U @ V.T
    ks = [k for k in args.rprecision_k if k < len(ids)]
    report = {
        "items": ids,
        "loss": align.infonce_loss(np.clip(S, -1, 1), model.temperature),
        "r_precision": {str(k): r_precision(S, k) for k in ks},
    }
    run.output(_write_text(args.output, _dump_json(report)))
    if args.motion_features:
        run.output(_write_bytes(args.motion_features, matfile.dumps({"features": U}, {"kind": "features", "space": "motion"})))
    if args.text_features:
        run.output(_write_bytes(args.text_features, matfile.dumps({"features": V}, {"kind": "features", "space": "text"})))


def _examples(run: Run, path) -> list[llm.Example]:
    return llm.load_examples(run.input(path))


def cmd_atomize(run: Run, args) -> None:
    text = args.text
    if text is None and args.text_file:
        text = run.input(args.text_file).read_text(encoding="utf-8").strip()
    if text is None:
        raise UsageError("atomize needs --text or --text-file")
    store = llm.FixtureStore(args.fixtures) if args.fixtures else None
    transport = llm.LlmTransport(args.mode, store, retries=args.retries)
    examples = _examples(run, args.examples)
    if args.mode == "replay":
        prompt = llm.build_inference_prompt(text, examples, args.periods).render()
        fixture = store.path_for(prompt)
        if fixture.is_file():
            run.input(fixture)
    matrix = llm.atomize(transport, text, examples, args.periods)
    run.output(_write_text(args.output, matrix.to_json() + "\n"))


def _prompt_list(run: Run, args) -> list[tuple[str, llm.AtomicTextMatrix]]:
    pairs = []
    if args.prompts:
        p = run.input(args.prompts)
        with open(p, encoding="utf-8") as fh:
            entries = json.load(fh)
        for e in entries:
            with open(run.input(p.parent / e["atomic"]), encoding="utf-8") as fh:
                pairs.append((e["text"], llm.AtomicTextMatrix.from_dict(json.load(fh))))
    elif args.text is not None and args.atomic:
        with open(run.input(args.atomic), encoding="utf-8") as fh:
            pairs.append((args.text, llm.AtomicTextMatrix.from_dict(json.load(fh))))
    else:
        raise UsageError("generate needs --prompts, or both --text and --atomic")
    return pairs


def conditioning_for(model: align.AlignmentModel, text: str, matrix: llm.AtomicTextMatrix,
                     text_dim: int) -> generative.Conditioning:
    """Raw text and atomic phrases embedded through the alignment text branch."""
    raw = align.embed_text(model, align.text_features(text, text_dim))
    grid = np.stack([
        np.stack([align.embed_text(model, align.text_features(matrix.phrase(p, part), text_dim))
                  for p in range(matrix.P)])
        for part in BODY_PARTS])
    return generative.Conditioning(raw, grid)


def cmd_generate(run: Run, args) -> None:
    tok = rvq.RVQModel.load(run.input(args.rvq))
    am = align.AlignmentModel.load(run.input(args.align))
    pairs = _prompt_list(run, args)
    if args.weights:
        stack = generative.GenerativeStack.load(run.input(args.weights))
    else:
        cfg = generative.StackConfig(K=args.K, D_m=args.d_model, D_W=am.embed_dim, D_T=am.embed_dim,
                                     C=tok.codebook_size + 1, R=tok.residual_layers, hidden=args.hidden)
        stack = generative.init_stack(cfg, args.seed)
    if stack.config.C != tok.codebook_size + 1 or stack.config.R != tok.residual_layers:
        raise ConfigError("generative weights do not match the tokenizer codebook")
    base = generative.StackScorer(stack, allowed=tok.codebook_size)
    resid = generative.StackResidualScorer(stack)
    N = args.length // tok.ratio
    if N < 1:
        raise ConfigError(f"--length {args.length} is shorter than the downsample ratio {tok.ratio}")
    out = Path(args.output_dir)
    gen_rows, text_rows, index = [], [], []
    for i, (text, matrix) in enumerate(pairs):
        cond = conditioning_for(am, text, matrix, args.text_dim)
        for s in range(args.num_samples):
            seed = args.seed + 1000 * i + s
            tokens = generative.decode_all(base, resid, N, args.steps, tok.residual_layers,
                                           args.temperature, seed, cond)
            name = f"sample_{i:03d}_{s:02d}"
            run.output(_write_text(out / f"{name}.tokens.csv", rvq.TokenSequence(tokens).to_csv()))
            rows = rvq.decode(tok, tokens)
            frames = rows.reshape(N, -1, 3)
            if N >= 2:
                run.output(_write_bytes(out / f"{name}.motion", _motion_bytes(frames, args.fps / tok.ratio)))
            gen_rows.append(align.embed_motion(am, align.pooled_features(rows)))
            text_rows.append(align.embed_text(am, align.text_features(text, args.text_dim)))
            index.append({"sample": name, "prompt": i, "seed": seed, "text": text})
    run.output(_write_bytes(out / "generated_features.atmx",
                            matfile.dumps({"features": np.stack(gen_rows)}, {"kind": "features", "space": "motion"})))
    run.output(_write_bytes(out / "text_features.atmx",
                            matfile.dumps({"features": np.stack(text_rows)}, {"kind": "features", "space": "text"})))
    run.output(_write_text(out / "samples.json", _dump_json(index)))


def _motion_bytes(frames: np.ndarray, fps: float) -> bytes:
    return save_motion(MotionSequence(fps, frames))


def cmd_metrics(run: Run, args) -> None:
    real = matfile.load_features(run.input(args.real))
    gen = matfile.load_features(run.input(args.gen))
    report = {
        "fid": fid(real, gen),
        "diversity": diversity(gen, args.diversity_pairs, args.seed),
        "diversity_pairs": args.diversity_pairs,
    }
    if args.text:
        text = matfile.load_features(run.input(args.text))
        if len(text) != len(gen):
            raise ConfigError(f"--text has {len(text)} rows but --gen has {len(gen)}")
        S = gen @ text.T
        report["r_precision"] = {str(k): r_precision(S, k) for k in args.rprecision_k}
    run.output(_write_text(args.output, _dump_json(report)))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atomotion", description="Atomic-motion text-to-motion pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def cmd(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file whose keys override flags")
        p.set_defaults(func=fn)
        return p

    p = cmd("decompose", cmd_decompose, "fine-grained description of one motion")
    p.add_argument("--input", required=True)
    p.add_argument("--periods", type=int, default=DEFAULT_PERIODS)
    p.add_argument("--thresholds")
    p.add_argument("--output", required=True)

    p = cmd("calibrate", cmd_calibrate, "percentile conversion thresholds from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)

    p = cmd("tokenize-train", cmd_tokenize_train, "train RVQ codebooks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--codebook-size", type=int, default=rvq.DEFAULT_CODEBOOK_SIZE)
    p.add_argument("--residual-layers", type=int, default=rvq.DEFAULT_RESIDUAL_LAYERS)
    p.add_argument("--ratio", type=int, default=rvq.DEFAULT_RATIO)
    p.add_argument("--iters", type=int, default=rvq.DEFAULT_KMEANS_ITERS)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)

    p = cmd("tokenize", cmd_tokenize, "encode a motion to RVQ tokens")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = cmd("detokenize", cmd_detokenize, "decode RVQ tokens to feature rows")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    for name, fn in (("align-train", cmd_align_train), ("align-eval", cmd_align_eval)):
        p = cmd(name, fn, "train the text-motion alignment" if name == "align-train"
                else "retrieval scores and embeddings of a dataset")
        p.add_argument("--dataset", required=True)
        p.add_argument("--ratio", type=int, default=rvq.DEFAULT_RATIO)
        p.add_argument("--text-dim", type=int, default=align.TEXT_DIM)
        p.add_argument("--output", required=True)
        if name == "align-train":
            p.add_argument("--embed-dim", type=int, default=align.DEFAULT_EMBED_DIM)
            p.add_argument("--temperature", type=float, default=align.DEFAULT_TEMPERATURE)
            p.add_argument("--steps", type=int, default=500)
            p.add_argument("--lr", type=float, default=0.5)
            p.add_argument("--seed", type=int)
            p.add_argument("--history")
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--rprecision-k", type=_int_list, default=[1, 2, 3])
            p.add_argument("--motion-features")
            p.add_argument("--text-features")

    p = cmd("atomize", cmd_atomize, "atomic text matrix from raw text via an LLM")
    p.add_argument("--mode", choices=llm.MODES, default="replay")
    p.add_argument("--examples", required=True)
    p.add_argument("--fixtures")
    p.add_argument("--text")
    p.add_argument("--text-file")
    p.add_argument("--periods", type=int)
    p.add_argument("--retries", type=int, default=1)
    p.add_argument("--output", required=True)

    p = cmd("generate", cmd_generate, "mask-decode token sequences and decode them")
    p.add_argument("--rvq", required=True)
    p.add_argument("--align", required=True)
    p.add_argument("--weights")
    p.add_argument("--text")
    p.add_argument("--atomic")
    p.add_argument("--prompts", help="JSON list of {text, atomic}")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--length", type=int, default=40, help="frames at the source frame rate")
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--text-dim", type=int, default=align.TEXT_DIM)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--d-model", type=int, default=96)
    p.add_argument("--hidden", type=int, default=192)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", required=True)

    p = cmd("metrics", cmd_metrics, "FID, R-precision and Diversity over feature files")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--text")
    p.add_argument("--rprecision-k", type=_int_list, default=[1, 2, 3])
    p.add_argument("--diversity-pairs", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    return parser


def _apply_config(args, run_inputs: list) -> None:
    if not getattr(args, "config", None):
        return
    path = _require_file(args.config)
    run_inputs.append(path)
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest in ("command", "func", "config") or not hasattr(args, dest):
            raise ConfigError(f"config key {key!r} is not an option of {args.command}")
        setattr(args, dest, value)


def _report(err: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": err, "exit": code, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config_inputs: list = []
        _apply_config(args, config_inputs)
        if args.command in SEEDED and getattr(args, "seed", None) is None:
            raise UsageError(f"{args.command} needs an explicit --seed")
    except UsageError as exc:
        return _report("usage", 2, str(exc))
    except AtomotionError as exc:
        return _report(exc.code, exc.exit_code, str(exc))
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}
    run = Run(args.command, config)
    run.inputs.extend(config_inputs)
    try:
        args.func(run, args)
        run.write_manifests()
    except UsageError as exc:
        return _report("usage", 2, str(exc))
    except AtomotionError as exc:
        return _report(exc.code, exc.exit_code, str(exc))
    except (matfile.MatFileError, json.JSONDecodeError, KeyError, ValueError, OSError) as exc:
        return _report("config-error", 9, f"{type(exc).__name__}: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
