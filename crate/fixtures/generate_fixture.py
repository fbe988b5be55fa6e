#!/usr/bin/env python3
"""Regenerates the bundled synthetic fixture.

Writes `corpus.jsonl` (submission-shaped records) and `owid_sample.csv`
(daily epidemic figures) next to this script. Output is fully determined
by SEED.
"""

import csv
import datetime as dt
import json
import math
import random
from pathlib import Path

SEED = 2021
HERE = Path(__file__).resolve().parent
START = dt.datetime(2020, 3, 1, tzinfo=dt.timezone.utc)
MONTHS = 24
POSTS_PER_MONTH = 30

THEMES = {
    "fear": [
        "I panic every time I go to the grocery store",
        "people walk around with no mask and it terrifies me",
        "my coworker has a cough and I think I was exposed",
        "I wash my hands until they bleed, my OCD is out of control",
        "I check my temperature five times a day",
        "the maskless shoppers make my anxiety spike",
        "I am scared of catching the virus and giving it to my grandmother",
        "every sneeze feels like a symptom of the virus",
        "I take every precautions I can and still feel unsafe",
        "the hospital near me is full and I am terrified",
    ],
    "education": [
        "college moved to online learning and I cannot focus",
        "my class is all zoom lectures and I fall behind",
        "this semester feels pointless from my bedroom",
        "as a freshman I never got to meet anyone on campus",
        "exams online make my anxiety worse",
        "my professor does not answer emails and the assignments pile up",
        "I am failing my courses because studying at home is impossible",
        "graduation was cancelled and my degree feels worthless",
    ],
    "occupation": [
        "I lost job last month and rent is due",
        "I have been unemployed since the lockdown started",
        "the company laid off half of the staff including me",
        "my income dropped and money is running out",
        "I had to quit job to look after my kids",
        "my career plans are ruined by the pandemic",
        "working from home blurs every boundary and I burn out",
        "the unemployment office never picks up the phone",
    ],
    "lonely": [
        "I feel so lonely living by myself during lockdown",
        "I have no social interaction beyond video calls",
        "I feel alone even when I talk to my family",
        "my social life disappeared and I feel disconnected",
        "I want to make friends but everything is closed",
        "the loneliness is crushing me this winter",
        "I lost the connection with my closest friendship",
        "I forgot how to socialize after months of isolation",
    ],
    "family": [
        "my parents argue all day since everyone is stuck at home",
        "my kids are bouncing off the walls and I have no patience left",
        "living with my family again is suffocating",
        "my partner and I fight constantly in this small apartment",
        "my mother is sick and I cannot visit her",
        "my father refuses to take the virus seriously",
    ],
    "development": [
        "will this pandemic ever end",
        "I am afraid things will never go back normal",
        "the new normal feels permanent and I lose hope",
        "it feels like lockdown will last forever",
        "the never ending restrictions are breaking me",
        "I miss my normal life before all of this",
        "the endless waves of cases make planning impossible",
        "every time restrictions lift they come back again",
    ],
    "mental": [
        "my depression is worse than ever and I cannot sleep",
        "my anxiety attacks happen every night now",
        "therapy sessions over the phone do not help much",
        "I feel numb and tired all the time",
        "I have been having panic attacks at night",
        "my insomnia keeps me awake until dawn",
    ],
}

NEWS = [
    "new study on vaccine effectiveness published today",
    "government announces new lockdown measures for the region",
    "health agency updates guidance on travel restrictions",
    "report shows hospital admissions declining this week",
    "officials confirm booster rollout schedule",
]

FILLER = [
    "Does anyone else feel this way?",
    "Thanks for reading.",
    "I just needed to get this off my chest.",
    "Any advice would help.",
    "I hope everyone here is staying safe.",
    "Sorry for the long post.",
    "I do not know who else to talk to.",
]

TITLES = {
    "fear": ["Scared to leave the house", "Health anxiety is back", "Cannot stop worrying"],
    "education": ["School is falling apart", "Online classes are killing me", "Struggling with college"],
    "occupation": ["Lost my job", "Money worries", "Work stress"],
    "lonely": ["So lonely", "Isolation is getting to me", "No one to talk to"],
    "family": ["Family stress", "Stuck at home with everyone", "Home is not peaceful"],
    "development": ["When will this end", "Losing hope", "Pandemic fatigue"],
    "mental": ["Struggling today", "Bad night again", "Mental health is slipping"],
}

SUPPORT_FLAIRS = ["Support", "Trigger Warning", "support"]
QUESTION_FLAIRS = ["Questions", "Discussion", "Vaccines are safe"]
NEWS_FLAIRS = ["News", "Good News", "Resources"]
EXPERIENCE_FLAIRS = ["Firsthand Account", "Biosafety Request"]
OTHER_FLAIRS = ["The Answer Is No", "Desperate Mod", "Misinformation-Debunked"]


def theme_weights(month_index):
    """Theme popularity drifts over the two years."""
    t = month_index / (MONTHS - 1)
    september = (month_index + 3) % 12 in (9, 10)  # index 0 is March
    return {
        "fear": 3.0 * math.exp(-3.0 * t) + 0.8,
        "education": 1.0 + (1.5 if september else 0.0),
        "occupation": 1.8 * math.exp(-2.0 * t) + 0.6,
        "lonely": 1.0 + 0.6 * math.sin(math.pi * t),
        "family": 0.8,
        "development": 0.5 + 2.5 * t,
        "mental": 1.0,
    }


def pick_weighted(rng, weights):
    names = sorted(weights)
    return rng.choices(names, [weights[n] for n in names])[0]


def make_post(rng, idx, month_index):
    month_start = START.replace(year=2020 + (2 + month_index) // 12, month=(2 + month_index) % 12 + 1)
    ts = month_start + dt.timedelta(days=rng.randrange(28), seconds=rng.randrange(86400))
    roll = rng.random()
    if roll < 0.10:
        flair = rng.choice(NEWS_FLAIRS)
        title = rng.choice(NEWS).capitalize()
        body = f"Source: https://news.example.org/story/{idx} {rng.choice(NEWS)}. {rng.choice(FILLER)}"
    else:
        theme = pick_weighted(rng, theme_weights(month_index))
        sentences = rng.sample(THEMES[theme], k=min(3, len(THEMES[theme])))
        if rng.random() < 0.4:
            other = pick_weighted(rng, theme_weights(month_index))
            sentences.append(rng.choice(THEMES[other]))
        sentences.append(rng.choice(FILLER))
        title = rng.choice(TITLES[theme])
        body = ". ".join(s[0].upper() + s[1:] for s in sentences)
        if roll < 0.55:
            flair = rng.choice(SUPPORT_FLAIRS)
        elif roll < 0.67:
            flair = rng.choice(QUESTION_FLAIRS)
            title = title + "?"
        elif roll < 0.74:
            flair = rng.choice(EXPERIENCE_FLAIRS)
        elif roll < 0.78:
            flair = rng.choice(OTHER_FLAIRS)
        else:
            flair = None
    if rng.random() < 0.02:
        body = rng.choice(["[removed]", "[deleted]"])
    record = {
        "id": f"t3_{idx:05d}",
        "created_utc": int(ts.timestamp()),
        "title": title,
        "selftext": body,
        "link_flair_text": flair,
        "permalink": f"/r/COVID19_support/comments/{idx:05d}/",
    }
    return record


def write_corpus(rng):
    lines = []
    idx = 0
    for m in range(MONTHS):
        for _ in range(POSTS_PER_MONTH):
            lines.append(json.dumps(make_post(rng, idx, m), sort_keys=True))
            idx += 1
    # a duplicate id and a malformed record, as real exports contain
    lines.insert(40, lines[10])
    lines.insert(80, '{"id": "t3_broken", "created_utc": ')
    (HERE / "corpus.jsonl").write_text("\n".join(lines) + "\n")
    return len(lines)


def write_owid(rng):
    locations = {
        "United States": ("USA", 330e6, 1.0),
        "United Kingdom": ("GBR", 67e6, 1.2),
        "Canada": ("CAN", 38e6, 0.7),
        "France": ("FRA", 67e6, 1.1),
    }
    start = dt.date(2020, 1, 22)
    end = dt.date(2022, 2, 28)
    rows = []
    for loc, (iso, pop, intensity) in locations.items():
        total = 0.0
        vaccinated = 0.0
        day = start
        while day <= end:
            t = (day - start).days
            wave = sum(math.exp(-((t - c) / 35.0) ** 2) * h for c, h in [(80, 0.4), (330, 1.0), (560, 0.7), (720, 2.2)])
            new = round(pop * 1e-4 * intensity * wave * (0.8 + 0.4 * rng.random()))
            total += new
            vacc_cell = ""
            if day >= dt.date(2020, 12, 14):
                vaccinated = min(pop * 0.85, vaccinated + pop * 0.004 * rng.random())
                vacc_cell = str(round(vaccinated))
            new_cell = "" if rng.random() < 0.01 else str(new)
            total_cell = "" if rng.random() < 0.01 else str(round(total))
            rows.append([iso, loc, day.isoformat(), total_cell, new_cell, vacc_cell])
            day += dt.timedelta(days=1)
    with open(HERE / "owid_sample.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iso_code", "location", "date", "total_cases", "new_cases", "people_vaccinated"])
        w.writerows(rows)
    return len(rows)


if __name__ == "__main__":
    rng = random.Random(SEED)
    n_posts = write_corpus(rng)
    n_rows = write_owid(rng)
    print(f"corpus.jsonl: {n_posts} lines, owid_sample.csv: {n_rows} rows")
