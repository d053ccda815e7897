"""Reference implementations the tests compare against.

Nothing here imports the package's arithmetic or policy code.
"""

from itertools import combinations


def square_multiply(base, exp, mod):
    """Left-to-right binary exponentiation on plain ints."""
    result = 1
    base %= mod
    for bit in bin(exp)[2:]:
        result = result * result % mod
        if bit == "1":
            result = result * base % mod
    return result


def egcd_inverse(x, n):
    """Inverse of x mod n via the extended Euclidean algorithm, or None."""
    old_r, r = x % n, n
    old_s, s = 1, 0
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
    if old_r != 1:
        return None
    return old_s % n


def eval_policy_tree(node, attrs):
    """Evaluate a nested tuple policy: ("attr", name) | ("and"|"or", children) | ("k", k, children)."""
    kind = node[0]
    if kind == "attr":
        return node[1] in attrs
    if kind == "and":
        return all(eval_policy_tree(c, attrs) for c in node[1])
    if kind == "or":
        return any(eval_policy_tree(c, attrs) for c in node[1])
    k, children = node[1], node[2]
    return sum(eval_policy_tree(c, attrs) for c in children) >= k


def render_policy_tree(node):
    """Text form accepted by the package's policy parser."""
    kind = node[0]
    if kind == "attr":
        return node[1]
    if kind in ("and", "or"):
        joiner = " AND " if kind == "and" else " OR "
        return "(" + joiner.join(render_policy_tree(c) for c in node[1]) + ")"
    return f"{node[1]} of (" + ", ".join(render_policy_tree(c) for c in node[2]) + ")"


def all_subsets(universe):
    items = sorted(universe)
    for n in range(len(items) + 1):
        for combo in combinations(items, n):
            yield frozenset(combo)


def covered(grants, grantee, i, action, t):
    """Brute-force grant predicate. grants: iterable of dicts."""
    for g in grants:
        if g["revoked"] or g["grantee"] != grantee:
            continue
        if i in g["parts"] and action in g["actions"] and g["valid_from"] <= t <= g["valid_until"]:
            return True
    return False


def random_tree(rng, universe, depth=0):
    """Random nested tuple policy over ``universe``, at most three gates deep."""
    if depth >= 3 or rng.random() < 0.35:
        return ("attr", rng.choice(universe))
    n = rng.randint(1, 4)
    children = [random_tree(rng, universe, depth + 1) for _ in range(n)]
    kind = rng.choice(["and", "or", "k"])
    if kind == "k":
        return ("k", rng.randint(1, n), children)
    return (kind, children) if n > 1 else children[0]
