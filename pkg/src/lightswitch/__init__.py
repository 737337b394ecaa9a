"""Light-switch perception and interaction: bbox refinement, element pose,
affordance-driven motion primitives, door motion and interactive scene graphs."""

__version__ = "0.1.0"
