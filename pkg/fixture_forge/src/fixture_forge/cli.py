"""fixture-forge command line: generate phantom cases, export the toy model."""

import argparse
import json
import sys

from .errors import FixtureForgeError
from .onnx_export import export_toy_model
from .synth import FixtureSpec, generate_case


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fixture-forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic case(s) from a spec JSON")
    p.add_argument("--spec", required=True, help="FixtureSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=1,
                   help="generate N cases, bumping seed and case id for each")

    p = sub.add_parser("export-model", help="write the toy exchange-format model")
    p.add_argument("--out", required=True, help="output model path (.onnx)")

    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            with open(args.spec) as fh:
                base = json.load(fh)
            base_seed = int(base.get("seed", 0))
            base_id = base.get("case_id", "case_000")
            for i in range(args.count):
                d = dict(base)
                if args.count > 1:
                    d["seed"] = base_seed + i
                    d["case_id"] = f"{base_id.rstrip('0123456789').rstrip('_') or 'case'}_{i:03d}"
                truth = generate_case(FixtureSpec.from_dict(d), args.out)
                counts = truth["region_voxel_counts"]
                print(f"{truth['case_id']}: ET={counts['ET']} TC={counts['TC']} "
                      f"WT={counts['WT']} blobs={len(truth['blobs'])}")
        else:
            path = export_toy_model(args.out)
            print(f"wrote {path}")
        return 0
    except FixtureForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
