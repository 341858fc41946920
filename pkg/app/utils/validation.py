from typing import Any, Iterable, Sequence


class ValidationError(ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class GGError(RuntimeError):
    pass


class InvariantViolation(GGError):
    pass


def require_positive_int(field: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(field, f"expected a positive integer, got {value!r}")
    if value <= 0:
        raise ValidationError(field, f"must be positive, got {value}")
    return value


def require_positive_float(field: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(field, f"expected a positive number, got {value!r}")
    if not value > 0:
        raise ValidationError(field, f"must be positive, got {value}")
    return float(value)


def require_fraction(field: str, value: Any) -> float:
    number = require_positive_float(field, value)
    if number >= 1.0:
        raise ValidationError(field, f"must lie in (0, 1), got {value}")
    return number


def require_increasing(field: str, values: Sequence[int]) -> list[int]:
    items = [require_positive_int(f"{field}[{idx}]", v) for idx, v in enumerate(values)]
    if not items:
        raise ValidationError(field, "must be nonempty")
    if any(b <= a for a, b in zip(items, items[1:])):
        raise ValidationError(field, f"must be strictly increasing, got {items}")
    return items


def require_distinct_count(field: str, values: Iterable[float], minimum: int) -> list[float]:
    items = [float(v) for v in values]
    if len(set(items)) < minimum:
        raise ValidationError(field, f"needs at least {minimum} distinct values, got {items}")
    return items
