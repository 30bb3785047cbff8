"""Exception types shared across the overlay modules."""


class OverlayError(Exception):
    pass


class ParseError(OverlayError, ValueError):
    pass


class ValidationError(OverlayError, ValueError):
    pass


class UnknownProperty(OverlayError, KeyError):
    def __str__(self):
        return f"undeclared property: {self.args[0]}"


class UnsupportedPattern(OverlayError, ValueError):
    pass


class UnboundSelectVariable(ParseError):
    pass


class NoContacts(OverlayError):
    pass


class LookupFailed(OverlayError):
    pass


class JoinFailed(OverlayError):
    pass


class SplitUnderflow(OverlayError):
    pass


class NothingToMergeWith(OverlayError):
    pass


class ConfigError(OverlayError, ValueError):
    pass
