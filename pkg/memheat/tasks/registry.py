from typing import Any, Callable, Dict, List, Optional, Type
from pydantic import BaseModel, ConfigDict
from memheat.core.errors import UsageError
from memheat.utils.logger import logger


class Task(BaseModel):
    """An experiment task runnable by the engine."""
    name: str
    description: str
    spec_model: Type[BaseModel]
    func: Callable

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def execute(self, context: Any, spec: BaseModel) -> Any:
        """
        Runs the task after checking the config's task block belongs to it.
        Task blocks reach here already validated by the config schema.
        """
        if not isinstance(spec, self.spec_model):
            raise UsageError(
                f"task '{self.name}' needs a '{self.name}' task block in the config, "
                f"got '{getattr(spec, 'kind', type(spec).__name__)}'"
            )
        logger.info(f"Executing task: {self.name}")
        return self.func(context, spec)


class TaskRegistry:
    """Registry of experiment tasks, keyed by the config's task kind."""

    def __init__(self):
        self._tasks: Dict[str, Task] = {}

    def register(self, name: str, description: str, spec_model: Type[BaseModel]):
        """Decorator to register a function as a task."""
        def decorator(func: Callable):
            self._tasks[name] = Task(name=name, description=description, spec_model=spec_model, func=func)
            logger.debug(f"Registered task: {name}")
            return func
        return decorator

    def get_task(self, name: str) -> Optional[Task]:
        return self._tasks.get(name)

    def names(self) -> List[str]:
        return list(self._tasks)

    def list_tasks(self) -> List[Dict[str, Any]]:
        return [
            {
                "name": task.name,
                "description": task.description,
                "parameters": task.spec_model.model_json_schema()
            }
            for task in self._tasks.values()
        ]


# Global registry instance
registry = TaskRegistry()
