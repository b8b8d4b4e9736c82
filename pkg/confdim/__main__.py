from confdim.cli import cli

cli(obj={})
