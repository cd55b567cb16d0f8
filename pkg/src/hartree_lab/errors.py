"""Error type shared by all modules.

Every failure carries a module-qualified code such as
``radial-core/invalid-dimension`` so that the CLI can report it verbatim.
"""


class HartreeError(Exception):
    def __init__(self, module: str, code: str, message: str = ""):
        self.module = module
        self.code = code
        self.message = message
        super().__init__(f"{module}/{code}: {message}" if message else f"{module}/{code}")

    @property
    def qualified(self) -> str:
        return f"{self.module}/{self.code}"
