"""Collects acceptance-criterion outcomes for the end-of-run summary."""

RESULTS = []


def record(number, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} ({name}): {detail}"
    RESULTS.append((number, line))
    print(line)
    assert passed, line
