"""Schema and contract checks on CLI outputs: check_outputs.py SCHEMAS DATA PREDICTIONS REPORT..."""

import json
import math
import sys

import jsonschema


def load(path):
    with open(path) as f:
        return json.load(f)


def main(schemas, data_dir, predictions, *reports):
    report_schema = load(f"{schemas}/report.schema.json")
    pred_schema = load(f"{schemas}/prediction.schema.json")
    with open(f"{data_dir}/test.jsonl") as f:
        split_ids = [json.loads(line)["id"] for line in f]

    seen = []
    with open(predictions) as f:
        for line in f:
            rec = json.loads(line)
            jsonschema.validate(rec, pred_schema)
            seen.append(rec["id"])
            for g in rec["groundings"]:
                assert rec["tokens"][g["pos"]] == g["token"], rec["id"]
                for b in g.get("attention", []):
                    assert math.isclose(sum(b["weights"]), 1.0, abs_tol=1e-9), rec["id"]
                    assert b["selected"] in b["eligible"], rec["id"]
                    assert len(b["weights"]) == len(b["eligible"]), rec["id"]
    assert seen == split_ids, "prediction ids do not follow the split"

    for path in reports:
        r = load(path)
        jsonschema.validate(r, report_schema)
        total = sum(r["taxonomy"]["ratios"].values())
        assert abs(total - 1.0) <= 1e-9, f"{path}: taxonomy ratios sum to {total}"
    print(f"ok: {len(seen)} predictions, {len(reports)} reports")


if __name__ == "__main__":
    main(*sys.argv[1:])
