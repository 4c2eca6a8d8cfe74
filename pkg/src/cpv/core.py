"""Finite type spaces, profiles, profile sets, and choice rules.

Profiles are tuples of per-agent type indices.  A profile set is a dense
bitmask over the mixed-radix index space of a :class:`TypeSpace`; agent 0
is the most significant digit.  All values are immutable and every
operation is a pure function.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property


class InputError(ValueError):
    """Malformed or out-of-contract input."""


class PreconditionError(InputError):
    """A documented operation precondition does not hold."""


class ResourceError(RuntimeError):
    """A configured cap (profiles, states, enumeration size) was exceeded."""


PROFILE_CAP_DEFAULT = 1 << 20

Profile = tuple[int, ...]


@dataclass(frozen=True)
class TypeSpace:
    """Per-agent finite type alphabets; the ambient product space."""

    alphabets: tuple[tuple[str, ...], ...]
    profile_cap: int = PROFILE_CAP_DEFAULT

    def __post_init__(self) -> None:
        if not self.alphabets:
            raise InputError("need at least one agent")
        for i, alpha in enumerate(self.alphabets):
            if not alpha:
                raise InputError(f"agent {i}: empty alphabet")
            if len(set(alpha)) != len(alpha):
                raise InputError(f"agent {i}: duplicate type labels")
        if self.total > self.profile_cap:
            raise ResourceError(
                f"profile space size {self.total} exceeds cap {self.profile_cap}"
            )

    @classmethod
    def shared(cls, n: int, alphabet: tuple[str, ...] | list[str]) -> TypeSpace:
        """All ``n`` agents draw types from one common alphabet."""
        if n < 1:
            raise InputError("need at least one agent")
        return cls(tuple(tuple(alphabet) for _ in range(n)))

    @property
    def n(self) -> int:
        return len(self.alphabets)

    @cached_property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.alphabets)

    @cached_property
    def total(self) -> int:
        return math.prod(self.sizes)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        # agent 0 is the most significant mixed-radix digit
        out = [1] * self.n
        for i in range(self.n - 2, -1, -1):
            out[i] = out[i + 1] * self.sizes[i + 1]
        return tuple(out)

    @cached_property
    def common_alphabet(self) -> bool:
        return all(a == self.alphabets[0] for a in self.alphabets)

    def check_profile(self, profile: Profile) -> None:
        if len(profile) != self.n:
            raise InputError(f"profile has {len(profile)} entries, expected {self.n}")
        for i, t in enumerate(profile):
            if not 0 <= t < self.sizes[i]:
                raise InputError(f"agent {i}: type index {t} out of range")

    def index(self, profile: Profile) -> int:
        self.check_profile(profile)
        return sum(t * s for t, s in zip(profile, self.strides))

    def profile(self, index: int) -> Profile:
        if not 0 <= index < self.total:
            raise InputError(f"profile index {index} out of range")
        out = []
        for size, stride in zip(self.sizes, self.strides):
            out.append((index // stride) % size)
        return tuple(out)

    def labels(self, profile: Profile) -> tuple[str, ...]:
        self.check_profile(profile)
        return tuple(self.alphabets[i][t] for i, t in enumerate(profile))

    def profile_of_labels(self, labels: list[str] | tuple[str, ...]) -> Profile:
        if len(labels) != self.n:
            raise InputError(f"profile has {len(labels)} labels, expected {self.n}")
        out = []
        for i, lab in enumerate(labels):
            try:
                out.append(self.alphabets[i].index(lab))
            except ValueError:
                raise InputError(f"agent {i}: unknown type label {lab!r}") from None
        return tuple(out)

    def iter_profiles(self):
        return itertools.product(*(range(s) for s in self.sizes))


def index_profile(space: TypeSpace, profile: Profile) -> int:
    """Mixed-radix profile index; agent 0 is the most significant digit."""
    return space.index(profile)


def profile_of_index(space: TypeSpace, index: int) -> Profile:
    """Inverse of :func:`index_profile`; round trip is the identity."""
    return space.profile(index)


@dataclass(frozen=True)
class ProfileSet:
    """A subset of profiles as a dense bitmask over profile indices."""

    space: TypeSpace
    mask: int

    def __post_init__(self) -> None:
        if self.mask < 0 or self.mask >> self.space.total:
            raise InputError("mask has bits outside the profile index space")

    @classmethod
    def full(cls, space: TypeSpace) -> ProfileSet:
        return cls(space, (1 << space.total) - 1)

    @classmethod
    def empty(cls, space: TypeSpace) -> ProfileSet:
        return cls(space, 0)

    @classmethod
    def from_indices(cls, space: TypeSpace, indices) -> ProfileSet:
        mask = 0
        for k in indices:
            if not 0 <= k < space.total:
                raise InputError(f"profile index {k} out of range")
            mask |= 1 << k
        return cls(space, mask)

    @classmethod
    def from_profiles(cls, space: TypeSpace, profiles) -> ProfileSet:
        return cls.from_indices(space, (space.index(p) for p in profiles))

    @classmethod
    def from_factors(cls, space: TypeSpace, factors) -> ProfileSet:
        """Product set with per-agent type-index factors."""
        factors = tuple(tuple(sorted(set(f))) for f in factors)
        if len(factors) != space.n:
            raise InputError(f"{len(factors)} factors for {space.n} agents")
        for i, f in enumerate(factors):
            if not f:
                raise InputError(f"agent {i}: empty factor")
            for t in f:
                if not 0 <= t < space.sizes[i]:
                    raise InputError(f"agent {i}: type index {t} out of range")
        mask = 0
        for profile in itertools.product(*factors):
            mask |= 1 << space.index(profile)
        return cls(space, mask)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    def contains(self, profile: Profile) -> bool:
        return bool(self.mask >> self.space.index(profile) & 1)

    def contains_index(self, index: int) -> bool:
        return bool(self.mask >> index & 1)

    def indices(self):
        mask = self.mask
        while mask:
            low = mask & -mask
            yield low.bit_length() - 1
            mask ^= low

    def profiles(self):
        for k in self.indices():
            yield self.space.profile(k)

    def intersect(self, other: ProfileSet) -> ProfileSet:
        return ProfileSet(self.space, self.mask & other.mask)

    def union(self, other: ProfileSet) -> ProfileSet:
        return ProfileSet(self.space, self.mask | other.mask)

    def difference(self, other: ProfileSet) -> ProfileSet:
        return ProfileSet(self.space, self.mask & ~other.mask)

    def projection(self, agent: int) -> tuple[int, ...]:
        """Sorted type indices agent ``agent`` takes within this set."""
        seen = set()
        for k in self.indices():
            seen.add((k // self.space.strides[agent]) % self.space.sizes[agent])
        return tuple(sorted(seen))


def product_factorization(space: TypeSpace, pset: ProfileSet):
    """Per-agent factors if ``pset`` is a product set, else ``None``.

    The candidate factors are the per-agent projections; the set is a
    product exactly when its cardinality matches the product of the
    projection sizes.
    """
    if pset.is_empty:
        raise InputError("cannot factor the empty set")
    factors = tuple(pset.projection(i) for i in range(space.n))
    if pset.size != math.prod(len(f) for f in factors):
        return None
    return factors


@dataclass(frozen=True)
class ChoiceRule:
    """Total map from profile indices to outcome ids.

    ``components``, when present, give each outcome's per-agent bundle;
    equal outcome ids therefore always carry equal per-agent components.
    """

    space: TypeSpace
    outcomes: tuple[str, ...]
    table: tuple[int, ...]
    components: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InputError("duplicate outcome labels")
        if len(self.table) != self.space.total:
            raise InputError(
                f"rule table has {len(self.table)} rows, expected {self.space.total}"
            )
        for x in self.table:
            if not 0 <= x < len(self.outcomes):
                raise InputError(f"outcome id {x} out of range")
        if self.components is not None:
            if len(self.components) != len(self.outcomes):
                raise InputError("components must be given per outcome id")
            for row in self.components:
                if len(row) != self.space.n:
                    raise InputError("component row length must equal agent count")

    @property
    def outcome_count(self) -> int:
        return len(self.outcomes)

    @property
    def has_components(self) -> bool:
        return self.components is not None

    def outcome_of(self, profile: Profile) -> int:
        return self.table[self.space.index(profile)]

    def outcome_label(self, outcome_id: int) -> str:
        return self.outcomes[outcome_id]

    def component_of(self, profile_index: int, agent: int) -> str:
        if self.components is None:
            raise InputError("rule has no per-agent components")
        return self.components[self.table[profile_index]][agent]


@dataclass(frozen=True)
class RestrictedRule:
    """The rule evaluated on a product subset; outcome ids are unchanged."""

    rule: ChoiceRule
    factors: tuple[tuple[int, ...], ...]
    constant: bool


def restrict_rule(rule: ChoiceRule, pset: ProfileSet) -> RestrictedRule:
    """View of the rule on a product profile set, plus a constancy report."""
    factors = product_factorization(rule.space, pset)
    if factors is None:
        raise InputError("restriction set is not a product set")
    space = rule.space
    sub_space = TypeSpace(
        tuple(
            tuple(space.alphabets[i][t] for t in factors[i])
            for i in range(space.n)
        )
    )
    table = []
    for profile in itertools.product(*factors):
        table.append(rule.table[space.index(profile)])
    sub = ChoiceRule(sub_space, rule.outcomes, tuple(table), rule.components)
    constant = len(set(table)) <= 1
    return RestrictedRule(sub, factors, constant)


@dataclass(frozen=True)
class Witness:
    """Product set on which the rule is non-constant yet, for every agent,
    all factor types are inseparable.  Certifies that no contextually
    private sequential-elicitation protocol exists."""

    factors: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "factors", tuple(tuple(sorted(set(f))) for f in self.factors)
        )

    def labels(self, space: TypeSpace) -> tuple[tuple[str, ...], ...]:
        return tuple(
            tuple(space.alphabets[i][t] for t in f)
            for i, f in enumerate(self.factors)
        )

    def profile_set(self, space: TypeSpace) -> ProfileSet:
        return ProfileSet.from_factors(space, self.factors)
