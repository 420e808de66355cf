"""Verdict lines collected by the acceptance tests and echoed in the terminal summary."""

LINES: list[str] = []


def record(label, ok, detail):
    LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    print(LINES[-1])
    return ok
