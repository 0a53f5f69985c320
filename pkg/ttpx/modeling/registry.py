from typing import Any, Callable, Dict, Type

EMBEDDING = "embedding"
MLM = "mlm"


class BackendRegistry:
    _backend_registry: Dict[tuple[str, str], Type] = {}

    @classmethod
    def register(cls, name: str = None, kind: str = EMBEDDING) -> Callable:
        def decorator(subclass: Type) -> Type:
            name_ = name or subclass.__name__.lower().replace("backend", "")
            key = (kind, name_)
            if key in cls._backend_registry:
                if subclass != cls._backend_registry[key]:
                    raise ValueError(f"Cannot register {kind} backend '{name_}' multiple times.")
                return subclass

            cls._backend_registry[key] = subclass
            subclass.registered_name = name_
            return subclass

        return decorator

    @classmethod
    def names(cls, kind: str = EMBEDDING) -> list[str]:
        return sorted(name for k, name in cls._backend_registry if k == kind)

    @classmethod
    def get(cls, name: str, kind: str = EMBEDDING, **kwargs) -> Any:
        if (kind, name) not in cls._backend_registry:
            raise ValueError(
                f"Unknown {kind} backend {name}. Available: {', '.join(cls.names(kind))}"
            )
        return cls._backend_registry[(kind, name)](**kwargs)
