"""
File contracts: instance and allocation JSON documents, dynamics traces and
price-of-anarchy reports as CSV.
"""
import json
import logging
from pathlib import Path

import pandas as pd

from ncgg.core import Agent, Allocation, GameInstance, Good, UtilityFunction, water_levels
from ncgg.errors import ValidationError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['round', 'agent', 'moves', 'phi', 'psi']
POA_COLUMNS = ['n', 'welfare_ne', 'welfare_common', 'ratio', 'clamped']
FLOAT_FORMAT = '%.12g'


def _check_keys(document, required, optional=(), where="document"):
    if not isinstance(document, dict):
        raise ValidationError(f"{where} must be an object, got {type(document).__name__}")
    missing = [k for k in required if k not in document]
    if missing:
        raise ValidationError(f"{where} is missing {', '.join(missing)}")
    unknown = sorted(set(document) - set(required) - set(optional))
    if unknown:
        raise ValidationError(f"{where} has unknown keys: {', '.join(unknown)}")


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where} must be a number, got {value!r}")
    return float(value)


def instance_to_dict(instance):
    return {
        'goods': [{'id': g.id, 'alpha': g.alpha} for g in instance.goods],
        'agents': [
            {
                'id': a.id,
                'budget': a.budget,
                'utility': {'kind': a.utility.kind, 'param': a.utility.param},
            }
            for a in instance.agents
        ],
        'edges': [[g, a] for g, a in instance.edges],
    }


def instance_from_dict(document):
    """Build a GameInstance from its JSON document, rejecting unknown keys at every level."""
    _check_keys(document, ('goods', 'agents', 'edges'))

    goods = []
    for entry in document['goods']:
        _check_keys(entry, ('id',), ('alpha',), where="good")
        goods.append(Good(str(entry['id']), _number(entry.get('alpha', 0.0), f"alpha of {entry['id']}")))

    agents = []
    for entry in document['agents']:
        _check_keys(entry, ('id', 'utility'), ('budget',), where="agent")
        utility = entry['utility']
        _check_keys(utility, ('kind', 'param'), where=f"utility of {entry['id']}")
        agents.append(Agent(
            str(entry['id']),
            UtilityFunction(str(utility['kind']), _number(utility['param'], f"param of {entry['id']}")),
            _number(entry.get('budget', 1.0), f"budget of {entry['id']}"),
        ))

    edges = []
    for edge in document['edges']:
        if not isinstance(edge, (list, tuple)) or len(edge) != 2:
            raise ValidationError(f"Edge must be a [good_id, agent_id] pair, got {edge!r}")
        edges.append((str(edge[0]), str(edge[1])))

    return GameInstance(tuple(goods), tuple(agents), tuple(edges))


def load_instance(path):
    with Path(path).open('r', encoding='utf-8') as fh:
        document = json.load(fh)
    return instance_from_dict(document)


def save_instance(instance, path):
    _write_json(instance_to_dict(instance), path)


def allocation_to_dict(instance, alloc):
    levels = water_levels(instance, alloc)
    return {
        'allocation': [[g, a, x] for (g, a), x in alloc.items()],
        'levels': {good.id: float(level) for good, level in zip(instance.goods, levels)},
    }


def allocation_from_dict(document):
    """Allocation from its document; the `levels` view is ignored on read."""
    _check_keys(document, ('allocation',), ('levels',))
    entries = {}
    for row in document['allocation']:
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise ValidationError(f"Allocation rows are [good_id, agent_id, amount], got {row!r}")
        good_id, agent_id, amount = row
        entries[(str(good_id), str(agent_id))] = _number(amount, f"amount on {good_id}/{agent_id}")
    return Allocation(entries)


def load_allocation(path):
    with Path(path).open('r', encoding='utf-8') as fh:
        return allocation_from_dict(json.load(fh))


def save_allocation(instance, alloc, path):
    _write_json(allocation_to_dict(instance, alloc), path)


def _write_json(document, path):
    path = Path(path)
    with path.open('w', encoding='utf-8') as fh:
        json.dump(document, fh, indent=2)
        fh.write('\n')
    logger.debug("wrote %s", path)


def trace_frame(trace):
    """One row per dynamics round with the potentials after it."""
    rows = [(r.round, r.agent, r.moves, r.potential_phi, r.potential_psi) for r in trace.rounds]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def write_trace(trace, path):
    trace_frame(trace).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("trace with %d rounds written to %s", len(trace.rounds), path)


def poa_frame(reports):
    rows = [(r.n, r.welfare_ne, r.welfare_reference, r.ratio, r.clamped) for r in reports]
    return pd.DataFrame(rows, columns=POA_COLUMNS)


def write_poa_report(reports, path):
    poa_frame(reports).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("price-of-anarchy report with %d rows written to %s", len(reports), path)
