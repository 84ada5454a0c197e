from .autodiff import Tape, Var
