"""End-to-end exploration of the pocket fixture.

The mission loop alternates flying and replanning: each planning iteration gets
an adaptive virtual time budget, plans from the state predicted one budget
ahead, and splices the result while the previous trajectory keeps executing.
The run ends when no frontier cluster with a reachable viewpoint remains.
"""
from voxplore import ExplorationMission, load_config, make_world

world = make_world("pocket")
config = load_config(None)
mission = ExplorationMission(world, config)
result = mission.run(max_time=240.0)

m = result.metrics
print(f"outcome:           {result.outcome}")
print(f"exploration time:  {m.exploration_time:.1f} s (simulated)")
print(f"flight distance:   {m.flight_distance:.1f} m")
print(f"coverage:          {m.coverage:.1f} m^3 "
      f"(reachable-knowable {world.reachable_known_volume(config.resolution):.1f} m^3)")
print(f"planning ticks:    {len(result.ticks)}")

print("\nfirst ten ticks (budget vs virtual plan time, outcome):")
for tick in result.ticks[:10]:
    print(f"  i={tick.index:3d} t={tick.sim_time:7.2f}s budget={tick.budget_s:5.3f}s "
          f"plan={tick.plan_s:5.3f}s {tick.outcome} ({tick.trigger})")

result.write_events_csv("/tmp/pocket_events.csv")
m.write_csv("/tmp/pocket_run.csv")
print("\nwrote /tmp/pocket_events.csv and /tmp/pocket_run.csv")
