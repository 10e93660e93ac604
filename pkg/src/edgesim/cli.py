"""Command-line entry point: batch replays and the interactive gateway service."""

from __future__ import annotations

import argparse
import os
import sys

from .gateway import GatewayServer
from .scenario import BUILTIN_SCENARIOS, ScenarioError, ScenarioRun, load_scenario

DEFAULT_BIND = os.environ.get("EDGESIM_BIND", "127.0.0.1:7466")


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesim",
        description="Deterministic emulator of a multi-radio edge node. "
        f"Built-in scenarios: {', '.join(BUILTIN_SCENARIOS)}.",
    )
    parser.add_argument("scenario", help="scenario file path or built-in name")
    parser.add_argument("--mode", choices=("scripted", "automated", "manual", "mixed"), default=None,
                        help="override the scenario's controller mode")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--out", default=None, help="report directory (default: report-<scenario>-<mode>)")
    parser.add_argument("--pace", type=float, default=None,
                        help="real-time factor: 0 = free-running (batch default), 1 = wall clock (serve default)")
    parser.add_argument("--serve", nargs="?", const=DEFAULT_BIND, default=None, metavar="HOST:PORT",
                        help=f"host the control/telemetry service instead of batch-running (default {DEFAULT_BIND})")
    parser.add_argument("--render", action="store_true",
                        help="also render PNG charts of the trace series (requires matplotlib)")
    return parser


def render_pngs(report_dir: str) -> list[str]:
    import csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for name, ylabel in (
        ("loads", "load"),
        ("per", "residual packet error rate"),
        ("sms_rtt", "RTT (s)"),
        ("sla_fraction", "fraction of SLAs satisfied"),
    ):
        path = os.path.join(report_dir, f"{name}.csv")
        if not os.path.exists(path):
            continue
        series: dict[str, tuple[list[float], list[float]]] = {}
        with open(path, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                xs, ys = series.setdefault(row["series"], ([], []))
                xs.append(float(row["time"]))
                ys.append(float(row["value"]))
        fig, ax = plt.subplots(figsize=(8, 3))
        for label, (xs, ys) in sorted(series.items()):
            ax.plot(xs, ys, label=label, linewidth=1)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(ylabel)
        ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
        png = os.path.join(report_dir, f"{name}.png")
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        script = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    mode = args.mode or script.mode
    out_dir = args.out or f"report-{script.name}-{mode}"

    try:
        if args.serve is not None:
            host, port = _parse_address(args.serve)
            pace = 1.0 if args.pace is None else args.pace
            run = ScenarioRun(script, mode=mode, seed=args.seed, pace=pace)
            server = GatewayServer(run, host, port)
            bound_host, bound_port = server.serve()
            print(f"serving {script.name} ({mode}) on {bound_host}:{bound_port}, paused at t=0")
            print("send a resume command to start the run")
            server.wait()
        else:
            pace = 0.0 if args.pace is None else args.pace
            run = ScenarioRun(script, mode=mode, seed=args.seed, pace=pace)
            run.execute()
    except (ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    report = run.report()
    paths = report.export(out_dir)
    if args.render:
        paths.extend(render_pngs(out_dir))
    summary = report.summary()
    fraction = summary["final_fraction_satisfied"]
    print(f"{script.name} [{mode}] seed={run.seed}: final SLA fraction = {fraction}")
    for record in summary["actions"]:
        print(f"  t={record['time']:>7.1f}  {record['action']['type']:<18} {record['initiator']:<24} {record['outcome']}")
    print(f"report written to {out_dir}/ ({len(paths)} files)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
