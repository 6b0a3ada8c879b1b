"""A small Monte Carlo campaign over the four contamination schemes.

Use the CLI (isogplm simulate --nr 200) for the full-size table; this demo
runs 20 replications per scheme so it finishes in well under a minute.
"""

from isogplm.simulate import ScenarioConfig, run_campaign, write_table

reports = [run_campaign(ScenarioConfig(contamination=s, replications=20))
           for s in ("C0", "C1", "C2", "C3")]
write_table("/dev/stdout", reports)
