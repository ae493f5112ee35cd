from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Constants:
    """Multipliers for the batch-size, probe-scale and iteration-count formulas.

    The defaults are the library defaults; experiments pin their own values
    in the config and every trace echoes the ones it used.
    """

    C_n: float = 8.0   # samples per iteration
    C_m: float = 4.0   # probe inverse variance m = C_m d log(n/delta)
    C_L: float = 4.0   # iteration count / candidate count
    C_S: float = 1.0   # number of elimination stages

    def with_(self, **kw) -> "Constants":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "Constants":
        if not d:
            return cls()
        names = {f.name for f in fields(cls)}
        bad = set(d) - names
        if bad:
            raise KeyError(f"unknown constants: {sorted(bad)}")
        return cls(**{k: float(v) for k, v in d.items()})


DEFAULT = Constants()
