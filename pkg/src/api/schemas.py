from typing import List

from pydantic import BaseModel


class SystemInfo(BaseModel):
    name: str
    n_q: int
    n_u: int
    n_x: int
    cyclic: List[int] = []
    controlled: bool
    multirate: bool


class SystemsResponse(BaseModel):
    systems: List[SystemInfo]


class ValidateResponse(BaseModel):
    valid: bool
    errors: List[str] = []
