class FixtureForgeError(Exception):
    pass


class InvalidSpec(FixtureForgeError):
    pass


class IoFailure(FixtureForgeError):
    pass
