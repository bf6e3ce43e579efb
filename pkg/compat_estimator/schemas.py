from __future__ import annotations

from pydantic import BaseModel, ConfigDict, ValidationError


class Document(BaseModel):
    """Base for every JSON document the package reads; unknown keys are errors."""

    model_config = ConfigDict(extra="forbid", frozen=True)


def validation_messages(error: ValidationError) -> list[str]:
    """One ``dotted.location: message`` line per problem pydantic found."""
    messages: list[str] = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        if item["type"] == "extra_forbidden":
            message = "unknown key"
        elif item["type"] == "value_error":
            message = str(item.get("ctx", {}).get("error", item["msg"]))
        else:
            message = item["msg"]
        messages.append(f"{location}: {message}" if location else message)
    return messages
