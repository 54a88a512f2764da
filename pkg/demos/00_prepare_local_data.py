"""Turn the raw public Credit-g and COMPAS files into the CSVs the bundled recipes expect.

Inputs (download them yourself):

* ``german.data`` - the space-separated UCI Statlog German Credit file
* ``compas-scores-two-years.csv`` - ProPublica's two-year recidivism export

Usage::

    python demos/00_prepare_local_data.py --german german.data \
        --compas compas-scores-two-years.csv --out data

Credit-g comes out with OpenML-style column names and category strings.
COMPAS is filtered the usual way (screening within 30 days of arrest, known
recidivism, no ordinary-traffic charges, scored, Black or white defendants)
and reduced to the columns used downstream, with prior counts bucketed.
"""
import argparse
import csv
from pathlib import Path

CREDIT_COLUMNS = [
    ("checking_status", ["<0", "0<=X<200", ">=200", "no checking"]),
    ("duration", None),
    ("credit_history", ["no credits/all paid", "all paid", "existing paid", "delayed previously",
                        "critical/other existing credit"]),
    ("purpose", ["new car", "used car", "furniture/equipment", "radio/tv", "domestic appliance",
                 "repairs", "education", "vacation", "retraining", "business", "other"]),
    ("credit_amount", None),
    ("savings_status", ["<100", "100<=X<500", "500<=X<1000", ">=1000", "no known savings"]),
    ("employment", ["unemployed", "<1", "1<=X<4", "4<=X<7", ">=7"]),
    ("installment_commitment", None),
    ("personal_status", ["male div/sep", "female div/dep/mar", "male single", "male mar/wid",
                         "female single"]),
    ("other_parties", ["none", "co applicant", "guarantor"]),
    ("residence_since", None),
    ("property_magnitude", ["real estate", "life insurance", "car", "no known property"]),
    ("age", None),
    ("other_payment_plans", ["bank", "stores", "none"]),
    ("housing", ["rent", "own", "for free"]),
    ("existing_credits", None),
    ("job", ["unemp/unskilled non res", "unskilled resident", "skilled",
             "high qualif/self emp/mgmt"]),
    ("num_dependents", None),
    ("own_telephone", ["none", "yes"]),
    ("foreign_worker", ["yes", "no"]),
]


FIRST_CODE = {
    "checking_status": 11, "credit_history": 30, "purpose": 40, "savings_status": 61,
    "employment": 71, "personal_status": 91, "other_parties": 101, "property_magnitude": 121,
    "other_payment_plans": 141, "housing": 151, "job": 171, "own_telephone": 191,
    "foreign_worker": 201,
}


def _decode(column: str, code: str, labels: list[str]) -> str:
    if code == "A410":  # purpose "others" breaks the numbering pattern
        return labels[10]
    return labels[int(code[1:]) - FIRST_CODE[column]]


def prepare_credit(src: Path, dst: Path) -> int:
    rows = []
    with src.open() as fh:
        for line in fh:
            cells = line.split()
            if not cells:
                continue
            row = []
            for (name, labels), cell in zip(CREDIT_COLUMNS, cells):
                row.append(cell if labels is None else _decode(name, cell, labels))
            row.append("good" if cells[-1] == "1" else "bad")
            rows.append(row)
    with dst.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c for c, _ in CREDIT_COLUMNS] + ["class"])
        w.writerows(rows)
    return len(rows)


def _priors_bucket(v: int) -> str:
    if v == 0:
        return "0"
    return "1 to 3" if v <= 3 else "More than 3"


def prepare_compas(src: Path, dst: Path) -> int:
    with src.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        col = {}
        for i, h in enumerate(header):
            col.setdefault(h, i)  # the export repeats a few column names
        kept = []
        for r in reader:
            days = r[col["days_b_screening_arrest"]]
            if days == "" or not -30 <= int(float(days)) <= 30:
                continue
            if r[col["is_recid"]] == "-1" or r[col["c_charge_degree"]] == "O":
                continue
            if r[col["score_text"]] in ("N/A", ""):
                continue
            if r[col["race"]] not in ("African-American", "Caucasian"):
                continue
            kept.append([r[col["sex"]], r[col["race"]], r[col["age_cat"]],
                         _priors_bucket(int(r[col["priors_count"]])), r[col["c_charge_degree"]],
                         r[col["two_year_recid"]]])
    with dst.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sex", "race", "age_cat", "priors_count", "c_charge_degree", "two_year_recid"])
        w.writerows(kept)
    return len(kept)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--german", type=Path)
    ap.add_argument("--compas", type=Path)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.german:
        n = prepare_credit(args.german, args.out / "credit-g.csv")
        print(f"credit-g.csv: {n} rows")
    if args.compas:
        n = prepare_compas(args.compas, args.out / "compas.csv")
        print(f"compas.csv: {n} rows")


if __name__ == "__main__":
    main()
