"""Shared test utilities: gradient-check point selection and the
independent nested-loop join oracle."""

import numpy as np

from cardlab.mscn import forward


def nested_loop_count(db, spec):
    """Independent cardinality oracle: literal nested-loop join over
    predicate-filtered rows, scanning every row of each table in tree
    order. No hashing, no sorting, no shared code with the executor's
    counting path."""
    order = [spec.aliases[0]]
    edges = list(spec.joins)
    conds = []  # (bound alias, bound col, new alias, new col) per join
    while edges:
        for j in edges:
            (la, lc), (ra, rc) = j.left, j.right
            if la in order and ra not in order:
                conds.append((la, lc, ra, rc))
                order.append(ra)
                edges.remove(j)
                break
            if ra in order and la not in order:
                conds.append((ra, rc, la, lc))
                order.append(la)
                edges.remove(j)
                break
        else:
            raise AssertionError("join graph not a connected tree")
    masks = {}
    for a in spec.aliases:
        table = db.table(spec.table_of(a))
        m = np.ones(table.row_count, dtype=bool)
        for p in spec.predicates_of(a):
            v = table.column(p.column).values
            m &= {"=": v == p.literal, "<": v < p.literal, ">": v > p.literal}[p.op]
        masks[a] = m
    cols = {
        (a, c): db.column_values(spec.table_of(a), c)
        for (a, c) in {(x[0], x[1]) for x in conds} | {(x[2], x[3]) for x in conds}
    }
    count = 0
    stack = [(0, {})]
    while stack:
        depth, bound = stack.pop()
        if depth == len(order):
            count += 1
            continue
        alias = order[depth]
        table = db.table(spec.table_of(alias))
        my_conds = [c for c in conds if c[2] == alias]
        for r in range(table.row_count):
            if not masks[alias][r]:
                continue
            ok = True
            for ba, bc, _, nc in my_conds:
                if cols[(ba, bc)][bound[ba]] != cols[(alias, nc)][r]:
                    ok = False
                    break
            if ok:
                stack.append((depth + 1, {**bound, alias: r}))
    return count


def flatten_params(params):
    return np.concatenate([params[k].ravel() for k in params])


def assign_params(params, vector):
    offset = 0
    for k in params:
        size = params[k].size
        params[k][...] = vector[offset : offset + size].reshape(params[k].shape)
        offset += size


def pick_generic_point(model, params, mb, h, seed=0, scale=0.05):
    """A parameter point whose pre-activations all clear the ReLU kinks by a
    comfortable margin, so central differences with step h stay one-sided.

    Freshly initialized models sit exactly on the kinks (zero biases meet
    the all-zero placeholder elements), which is a genuine point of
    non-differentiability rather than a gradient bug.
    """
    rng = np.random.default_rng(seed)
    base = flatten_params(params)
    for _ in range(50):
        point = base + rng.normal(scale=scale, size=base.size)
        assign_params(params, point)
        _, caches = forward(model, mb)
        margins = []
        for name in ("tables", "joins", "preds"):
            cache, _ = caches[name]
            margins.append(np.abs(cache.pre1).min())
            margins.append(np.abs(cache.pre2).min())
        margins.append(np.abs(caches["out"].pre1).min())
        if min(margins) > 20 * h:
            return point
    raise AssertionError("could not find a kink-free parameter point")
