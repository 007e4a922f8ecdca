"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES: dict = {}


def record(label: str, ok: bool, detail: str) -> None:
    LINES[label] = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
