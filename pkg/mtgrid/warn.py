from os import environ
import warnings


def warn(message: str) -> None:
    """
    Report a non-fatal anomaly of a simulation or a document

    Silenced when MTGRID_DISABLE_WARNINGS=1 is set in the environment
    """
    if "MTGRID_DISABLE_WARNINGS" in environ:
        if bool(int(environ["MTGRID_DISABLE_WARNINGS"])):
            return
    warnings.warn(message)
