"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: list[str] = []


def record(number: int, name: str, ok: bool, detail: str) -> str:
    line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return line
