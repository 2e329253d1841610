"""Collects acceptance-criterion outcomes so they can be printed one per line."""

RESULTS: dict[int, tuple[bool, str]] = {}

TITLES = {
    1: "vulnerable pairs equal brute force",
    2: "FoF equals brute-force components",
    3: "tight-loss gradient vs finite differences",
    4: "convergence and cluster restoration",
    5: "quantisation adds no violations, bound exact",
    6: "vanilla PGD loss is monotone",
    7: "zero-work floor",
    8: "codec round trip",
    9: "distributed invariance",
    10: "band monotonicity and overhead trend",
    11: "iteration budget bound",
}


def record(num: int, ok: bool, detail: str = "") -> None:
    prev = RESULTS.get(num)
    if prev is not None:
        ok = ok and prev[0]
        detail = "; ".join(x for x in (prev[1], detail) if x)
    RESULTS[num] = (bool(ok), detail)


def summary_lines() -> list[str]:
    out = []
    for num in sorted(TITLES):
        if num not in RESULTS:
            out.append(f"criterion {num:2d} [NOT RUN] {TITLES[num]}")
            continue
        ok, detail = RESULTS[num]
        tag = "PASS" if ok else "FAIL"
        out.append(f"criterion {num:2d} [{tag}] {TITLES[num]}" + (f" ({detail})" if detail else ""))
    return out
