from typing import Callable, Sequence, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(func: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """
    Applies func to every item, on a thread pool when threads > 1. Results come back in item
    order whatever the schedule, so reductions over them do not depend on the thread count.
    """
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    return list(Parallel(n_jobs=threads, prefer="threads")(delayed(func)(item) for item in items))
