"""In-pipe branch-rehabilitation robot: simulation and perception/machining algorithms."""
