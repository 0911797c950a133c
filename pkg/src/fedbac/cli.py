"""Command-line entry point.

By default commands execute in-process. With ``--server URL`` the CLI is a thin
client: it posts the validated config to a running ``fedbac serve`` instance
and downloads the resulting files.

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, MethodSpec, load_config
from .errors import ConfigError
from .runner import Report, comparison_config, run_config, sweep_config

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML/JSON experiment config")
    p.add_argument("--seed", type=int, help="first seed (overrides config)")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds (overrides config)")
    p.add_argument("--method", choices=["fedbac", "hierfavg", "ifca"], help="run only this method")
    p.add_argument("--participation", type=float, help="client participation rate p")
    p.add_argument("--k-max", type=int, dest="k_max", help="cluster count / upper bound")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.add_argument(
        "--deterministic", action="store_true", help="omit the timestamp so reruns are byte-identical"
    )
    p.add_argument("--server", help="submit to a running fedbac service instead of running locally")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedbac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run the configured methods"))
    _common(sub.add_parser("compare", help="run Fed-BAC, IFCA and HierFAVG side by side"))
    sw = sub.add_parser("sweep", help="one run per value of a numeric config field")
    _common(sw)
    sw.add_argument("--axis", required=True, help="field name, e.g. alpha_server or participation")
    sw.add_argument("--values", required=True, help="comma-separated values, e.g. 0.5,0.1")
    sv = sub.add_parser("serve", help="start the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return parser


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Fold CLI flags into the config; contradictory combinations raise ConfigError."""
    data = cfg.model_dump(mode="json")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.seeds is not None:
        data["seeds"] = args.seeds
    if args.method is not None:
        data["methods"] = [{"name": args.method}]
    for key in ("participation", "k_max"):
        value = getattr(args, key)
        if value is not None:
            for m in data["methods"]:
                m[key] = value
    if args.out is not None:
        data["output_dir"] = args.out
    try:
        new = ExperimentConfig.model_validate(data)
    except ValueError as exc:
        raise ConfigError(f"command-line overrides: {exc}") from exc
    try:
        new.resolved_methods()
    except ConfigError as exc:
        raise ConfigError(f"command-line overrides: {exc}") from exc
    return new


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc
    if not values:
        raise ConfigError("--values: empty value list")
    return values


def _remote(args, cfg: ExperimentConfig, out: Path) -> dict:
    import httpx

    body = {"config": cfg.model_dump(mode="json"), "deterministic": args.deterministic}
    endpoint = {"run": "/runs", "compare": "/compare", "sweep": "/sweeps"}[args.command]
    if args.command == "sweep":
        body.update(axis=args.axis, values=_parse_values(args.values))
    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=None) as client:
        resp = client.post(endpoint, json=body)
        if resp.status_code == 422:
            raise ConfigError(str(resp.json().get("detail")))
        resp.raise_for_status()
        result = resp.json()
        report = Report(summary=result["summary"])
        for name in result["files"]:
            f = client.get(f"/runs/{result['run_id']}/files/{name}")
            f.raise_for_status()
            if name.endswith(".csv"):
                report.csvs[name] = f.text
            else:
                report.extra[name] = f.json()
    report.write(out, "sweep_summary.json" if args.command == "sweep" else "summary.json")
    return report.summary


def _local(args, cfg: ExperimentConfig, out: Path) -> dict:
    if args.command == "sweep":
        report = sweep_config(cfg, args.axis, _parse_values(args.values), None, args.deterministic)
        report.write(out, "sweep_summary.json")
    else:
        if args.command == "compare":
            cfg = comparison_config(cfg)
        report = run_config(cfg, None, args.deterministic)
        report.write(out)
    return report.summary


def _print_summary(summary: dict) -> None:
    if "table" in summary:
        for row in summary["table"]:
            print(f"{summary['axis']}={row['value']:<8g} {row['method']:<10} "
                  f"acc {100 * row['accuracy_mean']:6.2f} ± {100 * row['accuracy_std']:.2f}")
        return
    for label, res in summary["methods"].items():
        acc = res["accuracy"]
        print(f"{label:<10} acc {100 * acc['mean']:6.2f} ± {100 * acc['std']:.2f}  "
              f"sigma {res['sigma_pp']['mean']:.2f}pp")
    for key, value in summary.get("comparison", {}).items():
        if key.startswith("delta"):
            print(f"{key}: {value:+.1f}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("fedbac.api:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = Path(cfg.output_dir)
        summary = (_remote if args.server else _local)(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_summary(summary)
    print(f"results written to {out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
