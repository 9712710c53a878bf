"""Exception types shared across the package.

Every error carries a short machine-parsable ``code`` that the command line
prints as a prefix before exiting with a nonzero status.
"""


class RoadMTLError(Exception):
    code = "E_ROADMTL"


class ShapeError(RoadMTLError, ValueError):
    code = "E_SHAPE"


class ConfigError(RoadMTLError, ValueError):
    code = "E_CONFIG"


class DataError(RoadMTLError, ValueError):
    code = "E_DATA"


class ContractError(RoadMTLError, RuntimeError):
    code = "E_CONTRACT"
