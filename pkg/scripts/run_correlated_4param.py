"""Four-parameter chain identification under correlated log errors."""

from _experiment import run

if __name__ == "__main__":
    run("chain_4param.yaml", __doc__)
