"""Writes recidivism.csv: a synthetic two-year recidivism table with four
demographic groups. Deterministic; uses only the standard library."""

import math
import random

N = 3000
GROUPS = [("A", 0.35, 2.6, 0.25), ("B", 0.30, 2.1, 0.1), ("C", 0.20, 1.8, -0.05), ("D", 0.15, 1.5, -0.15)]


def main():
    rng = random.Random(20240611)
    rows = []
    for _ in range(N):
        u, acc = rng.random(), 0.0
        for name, share, prior_mean, shift in GROUPS:
            acc += share
            if u < acc:
                break
        age = rng.gauss(0.0, 1.0)
        lam, k, p = prior_mean * math.exp(-0.25 * age), 0, math.exp(-prior_mean * math.exp(-0.25 * age))
        s, x = p, rng.random()
        while x > s and k < 40:
            k += 1
            p *= lam / k
            s += p
        priors = math.log1p(k)
        felony = 1 if rng.random() < 0.6 else 0
        male = 1 if rng.random() < 0.8 else 0
        logit = -1.7 - 0.55 * age + 0.95 * priors + 0.25 * felony + 0.2 * male + shift
        y = 1 if rng.random() < 1.0 / (1.0 + math.exp(-logit)) else 0
        onehot = [1 if name == g[0] else 0 for g in GROUPS]
        rows.append([round(age, 4), round(priors, 4), felony, male, *onehot, name, y])
    with open("recidivism.csv", "w") as f:
        f.write("age,priors,felony,male,group_a,group_b,group_c,group_d,group,two_year_recid\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")


if __name__ == "__main__":
    main()
