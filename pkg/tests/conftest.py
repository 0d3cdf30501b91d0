from datetime import datetime, timedelta, timezone

import pytest


def foursquare_lines(n_users=20, n_pois=12, checkins_per_user=12):
    """Raw dump where every user and POI clears the default 10/10 filter.

    User u visits POI (u + i) % n_pois at staggered times, so each POI sees
    every user once and histories are strictly time-ordered.
    """
    lines = []
    base = datetime(2012, 4, 3, 6, 0, 0, tzinfo=timezone.utc)
    for u in range(n_users):
        t = base + timedelta(minutes=17 * u)
        for i in range(checkins_per_user):
            poi = (u + i) % n_pois
            t += timedelta(hours=3, minutes=11 * ((u + i) % 5))
            when = t.strftime("%a %b %d %H:%M:%S +0000 %Y")
            lines.append(
                f"user{u}\tvenue{poi}\tcat\tCoffee\t{40.0 + 0.1 * poi:.4f}"
                f"\t{-74.0 + 0.05 * poi:.4f}\t-240\t{when}"
            )
    return lines


@pytest.fixture
def raw_foursquare(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("\n".join(foursquare_lines()) + "\n", encoding="utf-8")
    return path
