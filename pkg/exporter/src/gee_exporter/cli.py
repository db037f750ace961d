"""Command line entry point for the export client."""

import argparse
import pathlib
import sys

from .errors import ExporterError, ExportUnavailableError, FormatError, ValidationError
from .export import REPLAY, run_export
from .manifest import DONE, load_manifest, save_tasks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gee-exporter",
        description="Export Dynamic World batch-year rasters described by a pipeline manifest.",
    )
    parser.add_argument("manifest", help="manifest JSON produced by the pipeline")
    parser.add_argument("--out", required=True, help="directory for LRAS output")
    parser.add_argument("--mode", choices=["replay", "live"], default=REPLAY)
    parser.add_argument("--fixtures", help="recorded responses for replay mode")
    parser.add_argument("--status", help="status CSV path (default <out>/status.csv)")
    parser.add_argument("--concurrency", type=int, default=4)
    parser.add_argument(
        "--per-timestamp",
        action="store_true",
        help="export every scene in the window instead of one composite per year",
    )
    parser.add_argument("--audit", help="write the final task list to this JSON file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = pathlib.Path(args.out)
    status_path = pathlib.Path(args.status) if args.status else out_dir / "status.csv"
    try:
        tasks = load_manifest(args.manifest)
        tasks, rows = run_export(
            tasks,
            args.mode,
            out_dir,
            fixtures_dir=args.fixtures,
            status_path=status_path,
            concurrency=args.concurrency,
            per_timestamp=args.per_timestamp,
        )
    except (FormatError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExportUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.audit:
        save_tasks(tasks, args.audit)
    done = sum(1 for t in tasks if t.status == DONE)
    failed = len(tasks) - done
    print(f"exported {done} of {len(tasks)} tasks ({failed} failed), status in {status_path}")
    for row in rows:
        if row.status != DONE:
            print(f"  batch {row.batch_id} year {row.year}: {row.reason}")
    return 0 if failed == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
