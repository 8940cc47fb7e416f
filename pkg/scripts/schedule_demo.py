"""Print the three-star demo schedule and its per-node occupancy."""
from sgtsmac.harness import DEMO_REQUESTS, occupancy, run_schedule_demo
from sgtsmac.schedule import dump_schedule, validate_schedule


def main():
    t = run_schedule_demo()
    print(dump_schedule(t), end="")
    for node, _, level in DEMO_REQUESTS:
        print(f"# node {node} level {level}: {occupancy(t, node)}/{t.config.horizon} superframes")
    print(f"# violations: {len(validate_schedule(t))}")


if __name__ == "__main__":
    main()
