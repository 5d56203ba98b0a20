class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or update."""

    def __init__(self, message: str, client_id: int | None = None, round_index: int | None = None):
        self.client_id = client_id
        self.round_index = round_index
        where = []
        if client_id is not None:
            where.append(f"client {client_id}")
        if round_index is not None:
            where.append(f"round {round_index}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
