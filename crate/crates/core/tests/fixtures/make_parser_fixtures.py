"""Regenerates parser_fixtures.jsonl.

Each line holds a raw model reply and the prediction it must parse to. The
expected values are the inputs each reply was rendered from, so they do not
depend on the parser under test.

    python3 make_parser_fixtures.py > parser_fixtures.jsonl
"""

import json
import random

PLACES = [
    ("United States", "Washington", "Seattle", 47.6069, -122.3283),
    ("France", "Ile-de-France", "Paris", 48.8566, 2.3522),
    ("Brazil", "Sao Paulo", "Campinas", -22.9056, -47.0608),
    ("Japan", "Hokkaido", "Sapporo", 43.0618, 141.3545),
    ("South Africa", "Western Cape", "Cape Town", -33.9249, 18.4241),
    ("Australia", "Victoria", "Melbourne", -37.8136, 144.9631),
    ("Canada", "Quebec", "Montréal", 45.5019, -73.5674),
    ("Germany", "Bayern", "München", 48.1351, 11.582),
    ("New Zealand", "Canterbury", "Christchurch", -43.5321, 172.6362),
    ("Chile", "Magallanes", "Punta Arenas", -53.1638, -70.9171),
]

CLUES = [
    "temperate climate with evergreen trees",
    "concrete utility poles",
    "yellow center line",
    "left-hand traffic",
]


def expect(country=None, region=None, city=None, lat=None, lon=None, clues=None):
    has_coord = lat is not None and lon is not None
    return {
        "country": country,
        "region": region,
        "city": city,
        "lat": lat if has_coord else None,
        "lon": lon if has_coord else None,
        "clues": clues,
        "valid": any(v is not None for v in (country, region, city)) or has_coord,
    }


def obj(pairs, quote='"', sep=", "):
    def q(s):
        return quote + s + quote

    return "{" + sep.join(f"{q(k)}: {v}" for k, v in pairs) + "}"


def s(v, quote='"'):
    return quote + v + quote


def render(place, rng, variant):
    country, region, city, lat, lon = place
    std = [("country", s(country)), ("region", s(region)), ("city", s(city)), ("lat", s(str(lat))), ("lon", s(str(lon)))]
    full = expect(country, region, city, lat, lon)
    if variant == 0:
        return obj(std), full
    if variant == 1:
        return "```json\n" + obj(std, sep=",\n  ") + "\n```", full
    if variant == 2:
        return "Based on the architecture, I think this is the place.\n" + obj(std) + "\nHope this helps!", full
    if variant == 3:
        pairs = [(k, v.replace('"', "'")) for k, v in std]
        return obj(pairs, quote="'"), full
    if variant == 4:
        return obj(std)[:-1] + ", }", full
    if variant == 5:
        pairs = [("country", s(country)), ("region", s(region)), ("city", s(city)), ("lat", repr(lat)), ("lon", repr(lon))]
        return obj(pairs), full
    if variant == 6:
        pairs = [("Country", s(country)), ("REGION", s(region)), (" City ", s(city)), ("Latitude", s(str(lat))), ("Longitude", s(str(lon)))]
        return obj(pairs), full
    if variant == 7:
        pairs = [("country", s(country)), ("city", s(city)), ("lat", s(str(lat).replace(".", ","))), ("lon", s(str(lon).replace(".", ",")))]
        return obj(pairs), expect(country, None, city)
    if variant == 8:
        return obj([("country", s(country)), ("region", s(region)), ("lat", s("95.5")), ("lon", s(str(lon)))]), expect(country, region)
    if variant == 9:
        return obj([("country", s(country)), ("lat", s(str(lat)))]), expect(country)
    if variant == 10:
        noise = '{"note": "thinking {hard}"} then '
        return noise + obj(std), full
    if variant == 11:
        text = rng.choice(["I cannot tell where this is.", "Unknown location", "", "{}", "{not json at all}"])
        return text, expect()
    if variant == 12:
        clue = rng.choice(CLUES)
        pairs = std[:3] + [("clues", s(clue))] + std[3:]
        e = dict(full)
        e["clues"] = clue
        return obj(pairs), e
    if variant == 13:
        a, b = rng.sample(CLUES, 2)
        pairs = [("clues", json.dumps([a, b]))] + std
        e = dict(full)
        e["clues"] = a + " " + b
        return obj(pairs), e
    if variant == 14:
        first = obj([("country", s(country)), ("city", s(city))])
        second = obj([("country", s("Elsewhere")), ("lat", "0.5"), ("lon", "0.5")])
        return f"Answer: {first}\nAlternative: {second}", expect(country, None, city)
    if variant == 15:
        pairs = [("country", "“" + country + "”"), ("city", "“" + city + "”"), ("lat", str(lat)), ("lon", str(lon))]
        return obj(pairs, quote='"'), expect(country, None, city, lat, lon)
    if variant == 16:
        return obj([("country", s("  ")), ("region", s(region)), ("lng", s(str(lon))), ("lat", s(str(lat)))]), expect(None, region, None, lat, lon)
    if variant == 17:
        return obj([("country", "null"), ("city", "42"), ("lat", s("")), ("lon", s(str(lon)))]), expect()
    if variant == 18:
        return "The coordinates are " + obj([("lat", s(str(lat))), ("lon", s(str(lon)))]) + " roughly.", expect(lat=lat, lon=lon)
    if variant == 19:
        return obj([("answer", s(country)), ("confidence", "0.4")]) + " " + obj([("city", s(city))]), expect(city=city)
    raise ValueError(variant)


def main():
    rng = random.Random(20240601)
    n = 0
    for variant in range(20):
        for k in range(5):
            place = PLACES[(variant * 5 + k) % len(PLACES)]
            raw, exp = render(place, rng, variant)
            n += 1
            print(json.dumps({"id": f"fx{n:03d}", "variant": variant, "raw": raw, "expect": exp}, ensure_ascii=False))


if __name__ == "__main__":
    main()
