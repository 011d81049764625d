"""Independent reference implementations used by several test modules."""
import math

import numpy as np


def statevector(angles):
    """Full 2**d amplitude vector of a product of single-qubit rotations."""
    state = np.array([1.0])
    for t in angles:
        state = np.kron(state, np.array([math.cos(t), math.sin(t)]))
    return state


TIE = 1e-12


def replay_search(index, query, k):
    """Layer descent with brute-force per-layer minimum and a list-backed queue.

    Values within ``TIE`` of each other count as equal, so rounding noise in
    the statevector product cannot flip a tie; ties go to the lowest id and
    evict the highest id. Returns the sorted queue contents and
    ``(layer, candidates, selected)`` for every step.
    """
    queue = []
    top = max(i for i, g in enumerate(index.layers) if g.nodes)
    carried = None
    steps = []
    for layer in range(top, -1, -1):
        graph = index.layers[layer]
        if layer == top:
            cands = sorted(graph.nodes)
        else:
            cands = {carried}
            for n in graph.adjacency[carried]:
                cands.add(n)
                cands.update(graph.adjacency[n])
            cands = sorted(cands)
        scored = []
        for c in cands:
            overlap = float(statevector(index.store.angles[c]) @ statevector(query))
            scored.append((0.5 - 0.5 * overlap**2, c))
        low = min(d for d, _ in scored)
        best = min((x for x in scored if x[0] <= low + TIE), key=lambda x: x[1])
        carried = best[1]
        steps.append((layer, cands, carried))
        if len(queue) < k:
            queue.append(best)
        else:
            high = max(d for d, _ in queue)
            worst = max((x for x in queue if x[0] >= high - TIE), key=lambda x: x[1])
            if best[0] <= worst[0] + TIE:
                queue.remove(worst)
                queue.append(best)
    return sorted(queue), steps


def same_queue(entries, expected, atol=TIE):
    """Queue contents match by id, with dissimilarities equal within `atol`."""
    got = sorted(entries, key=lambda x: x[1])
    want = sorted(expected, key=lambda x: x[1])
    return [i for _, i in got] == [i for _, i in want] and all(
        abs(a[0] - b[0]) <= atol for a, b in zip(got, want)
    )
