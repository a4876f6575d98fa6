"""Independent reference implementations used to freeze expected values.

These deliberately avoid the package's own search and routing code.
"""

from itertools import product


def grid_distance(width, height, blocked, start, goal):
    """Shortest 4-connected path length by repeated relaxation of a distance map."""
    inf = width * height + 1
    dist = {(x, y): inf for x in range(width) for y in range(height) if (x, y) not in set(blocked)}
    if start not in dist or goal not in dist:
        return None
    dist[start] = 0
    changed = True
    while changed:
        changed = False
        for (x, y), d in dist.items():
            for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if nb in dist and dist[nb] + 1 < d:
                    d = dist[nb] + 1
                    changed = True
            dist[(x, y)] = d
    return None if dist[goal] >= inf else dist[goal]


def ground_primitive_table(doc):
    """Ground every primitive of a raw domain document into (pre, add, del) string sets."""
    ents = doc["entities"]
    out = []
    for name, spec in sorted(doc["primitives"].items()):
        params = [p.split(":") for p in spec.get("params", [])]
        pools = []
        for p in params:
            kind = p[1] if len(p) > 1 else None
            pools.append(sorted(e for e, v in ents.items() if kind is None or
                                (v if isinstance(v, str) else v["kind"]) == kind))
        for args in product(*pools):
            sub = {p[0]: a for p, a in zip(params, args)}

            def g(lit):
                for var, val in sub.items():
                    lit = lit.replace(var + ")", val + ")").replace(var + ",", val + ",")
                return lit.replace(" ", "")

            out.append((f"{name}({','.join(args)})",
                        frozenset(map(g, spec.get("pre", []))),
                        frozenset(map(g, spec.get("add", []))),
                        frozenset(map(g, spec.get("del", [])))))
    return out


def primitive_search(doc, init, required, forbidden=(), depth=8):
    """Breadth-first search over primitive applications; returns minimal depth or None."""
    table = ground_primitive_table(doc)
    norm = lambda xs: frozenset(x.replace(" ", "") for x in xs)
    required, forbidden = norm(required), norm(forbidden)
    layer = {norm(init)}
    seen = set(layer)
    for d in range(depth + 1):
        for s in layer:
            if required <= s and not (forbidden & s):
                return d
        nxt = set()
        for s in layer:
            for _, pre, add, dele in table:
                if pre <= s:
                    t = (s - dele) | add
                    if t not in seen:
                        seen.add(t)
                        nxt.add(t)
        layer = nxt
    return None


def fold_reverse(state, primitives):
    """Sequential effect application with each primitive's adds/dels applied in reverse order."""
    facts = set(state)
    for prim in primitives:
        for f in sorted(prim.del_effects, reverse=True):
            facts.discard(f)
        for f in sorted(prim.add_effects, reverse=True):
            facts.add(f)
    return frozenset(facts)
