from .modelhandler import ModelHandler
from .presethandler import PresetHandler
from .userinterface import UserInterface

__all__ = ["ModelHandler", "PresetHandler", "UserInterface"]
