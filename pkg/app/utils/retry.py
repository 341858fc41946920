from typing import Callable, Tuple, TypeVar

T = TypeVar("T")


def retry(
    attempts: int = 3,
    exceptions: tuple[type[BaseException], ...] = (Exception,),
    on_retry: Callable[[int, BaseException], None] | None = None,
) -> Callable[[Callable[[int], T]], Callable[[], Tuple[T, int]]]:
    """Re-run `func(attempt)` on the listed exceptions.

    The wrapped callable returns `(result, retries_used)`; the last error is
    re-raised once `attempts` is exhausted. `attempt` starts at 0 so callers
    can derive a fresh sub-stream per try.
    """

    def decorator(func: Callable[[int], T]) -> Callable[[], Tuple[T, int]]:
        def wrapper() -> Tuple[T, int]:
            last_error: BaseException | None = None
            for attempt in range(attempts):
                try:
                    return func(attempt), attempt
                except exceptions as exc:
                    last_error = exc
                    if on_retry is not None and attempt + 1 < attempts:
                        on_retry(attempt, exc)
            assert last_error is not None
            raise last_error

        return wrapper

    return decorator
