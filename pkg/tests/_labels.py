"""Top-feature labels as printed in the published importance table (display form)."""

PUBLISHED_TOP_FEATURES = [
    "Accumulated Steps weekend",
    "Activity Count for 24h weekday",
    "Automotive Count weekday",
    "Automotive Duration weekday",
    "Cycling Count weekend",
    "Cycling Duration Pct weekend",
    "Cycling Duration weekday",
    "Cycling Duration weekend",
    "Distance Travelled weekday",
    "Floors Ascended weekday",
    "Floors Ascended weekend",
    "Floors Descended weekday",
    "Floors Descended weekend",
    "Hour of Asleep weekend",
    "Hour of Waking Up weekday",
    "Physical Activity Count weekday",
    "Physical Activity Count weekend",
    "Physical Activity Duration weekend",
    "Running Count weekday",
    "Running Duration weekday",
    "Running Duration weekend",
    "Sleep Duration weekday",
    "Sleep Duration weekend",
    "Stationary Count weekday",
    "Stationary Count weekend",
    "Stationary Duration Weekday",
    "Stationary Duration weekday",
    "Walking Count weekend",
    "Walking Duration weekday",
]
