import itertools
import logging
import math
from typing import Dict, List, Union

from kcpsim.app.core.dynamics import LatticeState
from kcpsim.app.core.event_engine import DomainSpec, Site
from kcpsim.app.core.exceptions import UnsupportedModeError

logger = logging.getLogger('render')

ASCII_RAMP = " .:-=+*#%@"


def _pixel(value: float) -> int:
    return int(math.floor(255 * value + 0.5))


def _char(value: float) -> str:
    value = min(max(value, 0.0), 1.0)
    return ASCII_RAMP[min(9, int(math.floor(10 * value)))]


def _rows(values: Dict[Site, float], domain: DomainSpec, prefix: tuple) -> List[List[float]]:
    """Rows of the 2-d slice at the leading coordinates prefix (first free axis = row)"""
    r = domain.radius
    axis = range(-r, r + 1)
    if domain.dimension == 1:
        return [[values.get((x,), 0.0) for x in axis]]
    return [[values.get(prefix + (x, y), 0.0) for y in axis] for x in axis]


def render_snapshot(state: Union[LatticeState, Dict[Site, float]], domain: DomainSpec,
                    fmt: str = 'pgm') -> bytes:
    """Plain PGM (P2) image of a 2-d domain, or an ASCII ramp picture of any finite domain"""
    if not domain.is_finite:
        raise UnsupportedModeError("cannot render a lazy domain")
    values = state.values if isinstance(state, LatticeState) else state
    if fmt == 'pgm':
        if domain.dimension != 2:
            raise UnsupportedModeError(f"pgm needs a 2-d domain, got d={domain.dimension}")
        rows = _rows(values, domain, ())
        if any(v > 1 for row in rows for v in row):
            logger.warning("values above 1 clipped to 255")
        n = domain.linear_size
        lines = ['P2', f"{n} {n}", '255']
        lines += [' '.join(str(min(255, _pixel(v))) for v in row) for row in rows]
        return ('\n'.join(lines) + '\n').encode('ascii')
    if fmt == 'ascii':
        r = domain.radius
        blocks = []
        leading = itertools.product(range(-r, r + 1), repeat=max(0, domain.dimension - 2))
        for prefix in leading:
            blocks.append('\n'.join(''.join(_char(v) for v in row) for row in _rows(values, domain, prefix)))
        return ('\n\n'.join(blocks) + '\n').encode('ascii')
    raise UnsupportedModeError(f"unknown snapshot format {fmt!r}")
