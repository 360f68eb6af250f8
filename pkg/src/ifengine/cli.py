"""Command-line surface for batch use of the engine.

Subcommands wrap the library modules one-to-one: verify responses
against a constraint spec, synthesize and bucket prompts, filter
cold-start candidates, run the token-signal kernels over record files,
and evaluate the length reward. Every file-producing command also emits
a run manifest so a run can be reproduced exactly.

Exit codes: 0 success, 1 I/O failure, 2 validation/schema failure,
3 upstream client failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, coldstart, constraints, model_client, reward_shaping, signal_math, synthesis
from .errors import ClientError, EngineError, SchemaError, ValidationError

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_CLIENT = 3

VERIFY_SCHEMA_VERSION = "verify_v1"
COLDSTART_SCHEMA_VERSION = "coldstart_v1"
AUDIT_SCHEMA_VERSION = "coldstart_audit_v1"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid config JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"config file {path} must hold a JSON object")
    return obj


def _resolve(args: argparse.Namespace, config: dict, key: str, default):
    """Explicit flag > config file entry > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _write_manifest(path: Path, command: str, config: dict, inputs: list[str], outputs: list[str], counts: dict, started: float) -> None:
    manifest = {
        "command": command,
        "config_digest": model_client.config_digest(config),
        "inputs": inputs,
        "outputs": outputs,
        "counts": counts,
        "wall_time_s": round(time.perf_counter() - started, 6),
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _read_responses(path: str) -> list[tuple[str, str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "text" not in obj:
                raise SchemaError(f"{path}:{lineno}: expected an object with a 'text' field")
            rows.append((str(obj.get("response_id", f"line{lineno}")), str(obj["text"])))
    return rows


def cmd_verify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = constraints.spec_from_json(fh.read())
    rows = _read_responses(args.responses)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": VERIFY_SCHEMA_VERSION, "spec_id": spec.spec_id}) + "\n")
        for response_id, text in rows:
            report = constraints.verify(text, spec)
            fh.write(
                _dump(
                    {
                        "response_id": response_id,
                        "report": constraints.report_to_dict(report),
                        "dense": constraints.breakdown_to_dict(constraints.dense_reward(report)),
                        "sparse": constraints.sparse_reward(report),
                    }
                )
                + "\n"
            )
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "verify",
        {"spec": args.spec},
        [args.spec, args.responses],
        [str(out)],
        {"responses": len(rows)},
        started,
    )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = _load_config(args.config)
    seeds = synthesis.load_seeds(args.seeds)
    templates = synthesis.load_templates(args.templates)
    client = model_client.load_client(args.client_config)
    synth_config = synthesis.SynthesisConfig(
        k=int(_resolve(args, config, "k", synthesis.DEFAULT_K)),
        templates_per_base=int(
            _resolve(args, config, "templates_per_base", synthesis.DEFAULT_TEMPLATES_PER_BASE)
        ),
        seed=int(_resolve(args, config, "seed", 0)),
        max_in_flight=int(_resolve(args, config, "max_in_flight", 4)),
        max_tokens=int(_resolve(args, config, "max_tokens", synthesis.DEFAULT_MAX_TOKENS)),
        temperature=float(_resolve(args, config, "temperature", synthesis.DEFAULT_TEMPERATURE)),
    )
    outcome = synthesis.synthesize_dataset(seeds, templates, client, synth_config, args.out_dir)
    _write_manifest(
        Path(args.out_dir) / "run_manifest.json",
        "synth",
        {
            "k": synth_config.k,
            "templates_per_base": synth_config.templates_per_base,
            "seed": synth_config.seed,
            "client": client.config_digest(),
        },
        [args.seeds, args.templates],
        [str(Path(args.out_dir) / name) for name in ("pass.jsonl", "easy.jsonl", "hard.jsonl", "manifest.json")],
        outcome.manifest["counts"],
        started,
    )
    return EXIT_OK


def cmd_coldstart(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = _load_config(args.config)
    samples = coldstart.read_samples(args.samples)
    judge = model_client.load_client(args.judge_config)
    template = None
    if args.template:
        template = Path(args.template).read_text(encoding="utf-8")
    cs_config = coldstart.ColdstartConfig(
        min_tokens=int(_resolve(args, config, "min_tokens", coldstart.DEFAULT_MIN_TOKENS)),
        min_score=int(_resolve(args, config, "min_score", coldstart.DEFAULT_MIN_SCORE)),
        top_n=int(_resolve(args, config, "top_n", coldstart.DEFAULT_TOP_N)),
        balance_languages=bool(_resolve(args, config, "balance_languages", False)),
        max_in_flight=int(_resolve(args, config, "max_in_flight", 4)),
        template=template,
        judge_max_tokens=int(_resolve(args, config, "judge_max_tokens", 1024)),
        judge_temperature=float(_resolve(args, config, "judge_temperature", 0.0)),
    )
    result = coldstart.coldstart_filter(samples, judge, cs_config)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": COLDSTART_SCHEMA_VERSION}) + "\n")
        for sample in result.kept:
            fh.write(_dump(coldstart.sample_to_dict(sample)) + "\n")
    audit_path = Path(args.audit) if args.audit else Path(str(out) + ".audit.jsonl")
    with open(audit_path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"schema": AUDIT_SCHEMA_VERSION}) + "\n")
        for event in result.audit:
            fh.write(
                _dump(
                    {
                        "sample_id": event.sample_id,
                        "stage": event.stage,
                        "verdict": event.verdict,
                        "reason": event.reason,
                    }
                )
                + "\n"
            )
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "coldstart",
        {
            "min_tokens": cs_config.min_tokens,
            "min_score": cs_config.min_score,
            "top_n": cs_config.top_n,
            "balance_languages": cs_config.balance_languages,
            "judge": judge.config_digest(),
        },
        [args.samples],
        [str(out), str(audit_path)],
        {"in": len(samples), "kept": len(result.kept)},
        started,
    )
    return EXIT_OK


def cmd_signal(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = _load_config(args.config)
    records = signal_math.read_token_records(args.records)
    out = Path(args.out)

    if args.mode == "select":
        r_percent = float(_resolve(args, config, "r", signal_math.DEFAULT_SELECT_PERCENT))
        alpha = float(_resolve(args, config, "alpha", signal_math.DEFAULT_SELECT_ALPHA))
        selection = signal_math.sft_select(
            records, r_percent, alpha, literal_quantile=args.literal_quantile
        )
        signal_math.write_selection(out, selection, r_percent, alpha)
        counts = {"records": len(records), "selected": len(selection.selected)}
        params = {"r": r_percent, "alpha": alpha, "literal_quantile": args.literal_quantile}
    elif args.mode == "tea":
        tau = float(_resolve(args, config, "tau", signal_math.DEFAULT_TEA_TAU))
        cap = float(_resolve(args, config, "c", signal_math.DEFAULT_TEA_CAP))
        lam = float(_resolve(args, config, "lam", signal_math.DEFAULT_TEA_LAMBDA))
        result = signal_math.tea_loss(records, tau, cap)
        header = {
            "schema": signal_math.TEA_SCHEMA_VERSION,
            "tau": tau,
            "c": cap,
            "lambda": lam,
            "l_tea": result.l_tea,
            "token_count": len(records),
        }
        if args.l_grpo is not None:
            header["l_grpo"] = args.l_grpo
            header["combined_objective"] = signal_math.combined_objective(
                args.l_grpo, result.l_tea, lam
            )
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(_dump(header) + "\n")
            for rec, cov, coef in zip(records, result.covariances, result.coefficients):
                fh.write(
                    _dump(
                        {
                            "sample_id": rec.sample_id,
                            "position": rec.position,
                            "covariance": cov,
                            "coefficient": coef,
                        }
                    )
                    + "\n"
                )
        counts = {"records": len(records)}
        params = {"tau": tau, "c": cap, "lam": lam}
    else:  # report
        top_k = int(_resolve(args, config, "top_k", signal_math.DEFAULT_REPORT_TOP_K))
        min_freq = int(_resolve(args, config, "min_freq", signal_math.DEFAULT_REPORT_MIN_FREQ))
        rows = signal_math.token_entropy_report(records, top_k, min_freq)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(
                _dump(
                    {
                        "schema": signal_math.REPORT_SCHEMA_VERSION,
                        "top_k": top_k,
                        "min_freq": min_freq,
                    }
                )
                + "\n"
            )
            for text, mean_entropy, freq in rows:
                fh.write(
                    _dump({"token_text": text, "mean_entropy": mean_entropy, "frequency": freq})
                    + "\n"
                )
        counts = {"records": len(records), "reported": len(rows)}
        params = {"top_k": top_k, "min_freq": min_freq}

    _write_manifest(
        Path(str(out) + ".manifest.json"),
        f"signal {args.mode}",
        params,
        [args.records],
        [str(out)],
        counts,
        started,
    )
    return EXIT_OK


def cmd_reward(args: argparse.Namespace) -> int:
    params = reward_shaping.LengthRewardParams(
        l_max=args.lmax, r_c_threshold=args.threshold
    )
    r_l = reward_shaping.length_reward(args.rc, args.length, params)
    print(
        _dump(
            {
                "command": "reward",
                "version": __version__,
                "r_c": args.rc,
                "length": args.length,
                "l_max": args.lmax,
                "gamma": reward_shaping.gamma(args.length, args.lmax),
                "length_reward": r_l,
                "total_reward": reward_shaping.total_reward(args.rc, r_l),
            }
        )
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifengine",
        description="Verifiable-constraint rewards and training-signal kernels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="verify responses against a constraint spec")
    p.add_argument("--spec", required=True, help="constraint spec JSON (spec_v1)")
    p.add_argument("--responses", required=True, help="JSONL of {response_id, text}")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="synthesize and bucket prompts by hardness")
    p.add_argument("--seeds", required=True, help="text file, one base instruction per line")
    p.add_argument("--templates", required=True, help="templates JSON (templates_v1)")
    p.add_argument("--client-config", required=True, help="generation client config JSON")
    p.add_argument("--k", type=int, default=None, help="completions per prompt (default 10)")
    p.add_argument("--templates-per-base", type=int, default=None, dest="templates_per_base")
    p.add_argument("--seed", type=int, default=None, help="master sampling seed (default 0)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config merged under explicit flags")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("coldstart", help="filter cold-start candidate samples")
    p.add_argument("--samples", required=True, help="JSONL of candidate samples")
    p.add_argument("--judge-config", required=True, help="judge client config JSON")
    p.add_argument("--min-score", type=int, default=None, dest="min_score")
    p.add_argument("--min-tokens", type=int, default=None, dest="min_tokens")
    p.add_argument("--top-n", type=int, default=None, dest="top_n")
    p.add_argument("--balance-languages", action="store_const", const=True, default=None, dest="balance_languages")
    p.add_argument("--template", default=None, help="judge template file override")
    p.add_argument("--audit", default=None, help="audit log path (default <out>.audit.jsonl)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_coldstart)

    p = sub.add_parser("signal", help="token-signal kernels over record files")
    p.add_argument("mode", choices=["select", "tea", "report"])
    p.add_argument("--records", required=True, help="token-record JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--r", type=float, default=None, help="selected percent (default 80)")
    p.add_argument("--alpha", type=float, default=None, help="entropy weight (default 0.8)")
    p.add_argument(
        "--literal-quantile",
        action="store_true",
        dest="literal_quantile",
        help="threshold at the r-quantile instead of the (100-r)-quantile",
    )
    p.add_argument("--tau", type=float, default=None, help="softmax temperature (default 1.0)")
    p.add_argument("--c", type=float, default=None, help="coefficient cap (default 100)")
    p.add_argument("--lam", type=float, default=None, help="regularizer weight (default 0.05)")
    p.add_argument("--l-grpo", type=float, default=None, dest="l_grpo", help="policy loss to combine")
    p.add_argument("--top-k", type=int, default=None, dest="top_k")
    p.add_argument("--min-freq", type=int, default=None, dest="min_freq")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_signal)

    p = sub.add_parser("reward", help="evaluate the length reward for one rollout")
    p.add_argument("--rc", type=float, required=True, help="correctness score in [0, 1]")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--lmax", type=int, required=True)
    p.add_argument("--threshold", type=float, default=reward_shaping.DEFAULT_RC_THRESHOLD)
    p.set_defaults(func=cmd_reward)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except (ValidationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
