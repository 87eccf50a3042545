import numpy as np
import pytest

from gridsec.gridcore import Generator, GridCase, Line, Load, bundled_case


@pytest.fixture
def ring3():
    return bundled_case("ring3")


@pytest.fixture
def case5():
    return bundled_case("case5")


def random_connected_case(rng: np.random.Generator, n_buses: int, extra_lines: int = 2) -> GridCase:
    """Random spanning tree plus a few chords, all lines D-FACTS capable."""
    buses = tuple(range(1, n_buses + 1))
    lines, pairs = [], set()
    for b in buses[1:]:
        a = int(rng.integers(1, b))
        pairs.add((a, b))
    for _ in range(extra_lines):
        a, b = sorted(rng.choice(buses, size=2, replace=False))
        pairs.add((int(a), int(b)))
    for k, (a, b) in enumerate(sorted(pairs)):
        lines.append(Line(f"L{k}", a, b, float(rng.uniform(0.02, 0.5)), dfacts=True))
    return GridCase(buses=buses, slack_bus=1, lines=tuple(lines))


def random_dispatch_case(rng: np.random.Generator, ng: int) -> GridCase:
    base = random_connected_case(rng, int(rng.integers(3, 7)))
    lines = tuple(Line(ln.id, ln.from_bus, ln.to_bus, ln.x, limit=float(rng.uniform(0.3, 2.0)))
                  for ln in base.lines)
    gen_buses = rng.choice(base.buses, size=ng, replace=False)
    gens = tuple(Generator(f"G{k}", int(b), float(rng.uniform(5, 50)), 0.0, float(rng.uniform(0.5, 2.0)))
                 for k, b in enumerate(gen_buses))
    loads = tuple(Load(f"D{b}", b, float(rng.uniform(0.05, 0.5))) for b in base.buses if b not in gen_buses)
    return GridCase(base.buses, base.slack_bus, lines, gens, loads)


# one line per acceptance criterion, echoed at the end of the run
CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
