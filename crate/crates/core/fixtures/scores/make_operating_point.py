"""Writes operating_point.json: 250 malicious and 500 benign similarity
scores laid out so that a Youden-J search over 0.50..0.95 (step 0.01) with
FPR <= 0.05 selects tau = 0.78 at TPR 0.720 and FPR 0.038.

  malicious: 180 in (0.781, 0.789), 70 in [0.05, 0.70]
  benign:     19 in (0.90, 0.99), 8 in (0.771, 0.779), 473 in [0.00, 0.70]

Above 0.78 sit 180 malicious and 19 benign (0.720 / 0.038). Lowering tau
to 0.77 admits the 8 benign scores in (0.771, 0.779) and FPR becomes 0.054,
over the cap. Raising it to 0.79 loses every malicious score above 0.78.
"""
import json
import os


def spread(n, lo, hi):
    step = (hi - lo) / (n + 1)
    return [round(lo + (k + 1) * step, 6) for k in range(n)]


def main():
    rows = []
    for s in spread(180, 0.781, 0.789):
        rows.append({"score": s, "label": "malicious"})
    for s in spread(70, 0.05, 0.70):
        rows.append({"score": s, "label": "malicious"})
    for s in spread(19, 0.90, 0.99):
        rows.append({"score": s, "label": "benign"})
    for s in spread(8, 0.771, 0.779):
        rows.append({"score": s, "label": "benign"})
    for s in spread(473, 0.0, 0.70):
        rows.append({"score": s, "label": "benign"})
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "operating_point.json")
    with open(out, "w") as f:
        json.dump(rows, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
