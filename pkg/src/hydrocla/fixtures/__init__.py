"""Bundled benchmark networks and measurement files.

Two desk-scale networks ship with the package:

* ``net34`` — 34 nodes, 41 pipes plus 6 pumps (47 links), 8 fixed-head
  nodes; a hilly-area system fed by pumped and gravity reservoirs.  The
  ``net34_obs`` variant carries the observed (error-laden) demands and fixed
  heads used as the estimation base case.
* ``net65`` — 65 nodes, 91 pipes, 5 fixed-head nodes; a city system with
  gravity supply only.

Measurement files pair each network with its default error bounds; the
``_case2``/``_case3`` variants add the meter placements studied in the
demos and tests.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..network import MeasurementSet, Network, parse_measurements, parse_network

FIXTURE_NAMES = (
    "net34",
    "net34_obs",
    "net65",
)


def fixture_path(filename: str) -> Path:
    """Filesystem path of a bundled fixture file (for example ``net34.net``)."""
    path = resources.files("hydrocla.fixtures").joinpath(filename)
    if not path.is_file():
        raise FileNotFoundError(f"no bundled fixture {filename!r}")
    return Path(str(path))


def load_fixture(name: str) -> tuple[Network, MeasurementSet]:
    """Load a bundled network and its default measurement set by name.

    ``net34`` and ``net65`` carry the true demands and fixed heads;
    ``net34_obs`` the observed variants used as the estimation base.
    """
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURE_NAMES}")
    net_file = fixture_path(f"{name}.net")
    meas_name = "net34.meas" if name.startswith("net34") else "net65.meas"
    net = parse_network(net_file.read_text())
    meas = parse_measurements(fixture_path(meas_name).read_text(), net)
    return net, meas
