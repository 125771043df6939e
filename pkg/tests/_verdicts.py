"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    LINES.append(line)
    print(line)
    return ok
