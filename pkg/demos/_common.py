from pathlib import Path

from bsdelab import cli_io

HERE = Path(__file__).resolve().parent


def scenario(name):
    return cli_io.load_scenario(HERE / "scenarios" / name)
