//! Synthetic catalog and the scroll-click-watch user model.
//!
//! A user walks down the ranked list from position 0. Each examined title
//! is clicked with its click probability. A click ends the session with a
//! watch whose completed fraction depends on whether the user intended to
//! finish the title. Without a click the user leaves with probability
//! `stop_prob` and otherwise examines the next position.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::RankerModel;
use crate::rng::{self, Stream};

pub const PROB_FLOOR: f64 = 0.001;
pub const PROB_CEIL: f64 = 0.999;
pub const MIN_DURATION_SECONDS: f64 = 600.0;
pub const MIN_WATCH_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

impl NormalLaw {
    pub const fn new(mean: f64, sd: f64) -> Self {
        NormalLaw { mean, sd }
    }

    fn draw(&self, rng: &mut Stream) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        self.mean + self.sd * rng.sample::<f64, _>(StandardNormal)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.mean.is_finite() && self.sd.is_finite() && self.sd >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{name}: mean must be finite and sd >= 0"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_titles: usize,
    pub click_prob_law: NormalLaw,
    pub intention_law: NormalLaw,
    pub intender_fraction_law: NormalLaw,
    pub non_intender_fraction_law: NormalLaw,
    pub duration_law: NormalLaw,
    pub stop_prob: f64,
    /// Seconds per normalized watch unit.
    pub watch_scale: f64,
    pub master_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_users: 10_000,
            n_titles: 1_000,
            click_prob_law: NormalLaw::new(0.05, 0.02),
            intention_law: NormalLaw::new(0.5, 0.15),
            intender_fraction_law: NormalLaw::new(0.9, 0.05),
            non_intender_fraction_law: NormalLaw::new(0.2, 0.1),
            duration_law: NormalLaw::new(6000.0, 1800.0),
            stop_prob: 0.1,
            watch_scale: 3600.0,
            master_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_titles == 0 {
            return Err(Error::InvalidConfig(
                "n_users and n_titles must be >= 1".into(),
            ));
        }
        if !(self.stop_prob > 0.0 && self.stop_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_prob must lie in (0, 1], got {}",
                self.stop_prob
            )));
        }
        if !(self.watch_scale > 0.0 && self.watch_scale.is_finite()) {
            return Err(Error::InvalidConfig("watch_scale must be positive".into()));
        }
        self.click_prob_law.validate("click_prob_law")?;
        self.intention_law.validate("intention_law")?;
        self.intender_fraction_law
            .validate("intender_fraction_law")?;
        self.non_intender_fraction_law
            .validate("non_intender_fraction_law")?;
        self.duration_law.validate("duration_law")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TitleProfile {
    pub title_id: usize,
    pub click_prob: f64,
    pub completion_intention_prob: f64,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub titles: Vec<TitleProfile>,
}

fn clip_prob(x: f64) -> f64 {
    x.clamp(PROB_FLOOR, PROB_CEIL)
}

fn clip_fraction(x: f64) -> f64 {
    x.clamp(MIN_WATCH_FRACTION, 1.0)
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = rng::stream(config.master_seed, "world", &[]);
    let titles = (0..config.n_titles)
        .map(|title_id| TitleProfile {
            title_id,
            click_prob: clip_prob(config.click_prob_law.draw(&mut rng)),
            completion_intention_prob: clip_prob(config.intention_law.draw(&mut rng)),
            duration_seconds: config.duration_law.draw(&mut rng).max(MIN_DURATION_SECONDS),
        })
        .collect();
    Ok(World {
        config: config.clone(),
        titles,
    })
}

impl World {
    pub fn n_titles(&self) -> usize {
        self.titles.len()
    }

    /// Expected watch seconds of one impression of `title_id`, ignoring
    /// fraction clipping.
    pub fn expected_watch(&self, title_id: usize) -> f64 {
        let t = &self.titles[title_id];
        let q = t.completion_intention_prob;
        let fraction = q * self.config.intender_fraction_law.mean
            + (1.0 - q) * self.config.non_intender_fraction_law.mean;
        t.click_prob * t.duration_seconds * fraction
    }

    /// Probability that the user reaches each position of `ranking`.
    pub fn reach_probabilities(&self, ranking: &[usize]) -> Vec<f64> {
        let keep = 1.0 - self.config.stop_prob;
        let mut reach = 1.0;
        ranking
            .iter()
            .map(|&t| {
                let here = reach;
                reach *= (1.0 - self.titles[t].click_prob) * keep;
                here
            })
            .collect()
    }

    fn check_ranking(&self, ranking: &[usize]) -> Result<()> {
        let n = self.n_titles();
        if ranking.len() != n {
            return Err(Error::InvalidRanking(format!(
                "ranking has {} entries for a catalog of {n}",
                ranking.len()
            )));
        }
        let mut seen = vec![false; n];
        for &t in ranking {
            if t >= n || seen[t] {
                return Err(Error::InvalidRanking(format!(
                    "title {t} is unknown or repeated"
                )));
            }
            seen[t] = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub user_id: usize,
    pub day: usize,
    pub position: usize,
    pub title_id: usize,
    pub clicked: bool,
    pub watch_seconds: f64,
}

fn run_session(
    user_id: usize,
    day: usize,
    ranking: &[usize],
    world: &World,
    rng: &mut Stream,
) -> Vec<SessionEvent> {
    let cfg = &world.config;
    let mut events = Vec::new();
    for (position, &title_id) in ranking.iter().enumerate() {
        let title = &world.titles[title_id];
        let clicked = rng.random::<f64>() < title.click_prob;
        if clicked {
            let intends = rng.random::<f64>() < title.completion_intention_prob;
            let law = if intends {
                &cfg.intender_fraction_law
            } else {
                &cfg.non_intender_fraction_law
            };
            let fraction = clip_fraction(law.draw(rng));
            events.push(SessionEvent {
                user_id,
                day,
                position,
                title_id,
                clicked: true,
                watch_seconds: title.duration_seconds * fraction,
            });
            break;
        }
        events.push(SessionEvent {
            user_id,
            day,
            position,
            title_id,
            clicked: false,
            watch_seconds: 0.0,
        });
        if rng.random::<f64>() < cfg.stop_prob {
            break;
        }
    }
    events
}

/// One user's scroll through `ranking`, one event per examined title.
pub fn simulate_session(
    user_id: usize,
    day: usize,
    ranking: &[usize],
    world: &World,
    rng: &mut Stream,
) -> Result<Vec<SessionEvent>> {
    world.check_ranking(ranking)?;
    Ok(run_session(user_id, day, ranking, world, rng))
}

/// Stream owned by one user's session on one day.
pub fn session_stream(world: &World, day: usize, user_id: usize) -> Stream {
    rng::stream(
        world.config.master_seed,
        "session",
        &[day as u64, user_id as u64],
    )
}

/// Where the day's ranking comes from.
#[derive(Debug, Clone, Copy)]
pub enum RankingSource<'a> {
    Fixed(&'a [usize]),
    Model(&'a RankerModel),
}

/// Runs every user's session for `day`. Events come back sorted by user id
/// then position, independent of how users were scheduled.
pub fn simulate_day(
    source: RankingSource<'_>,
    world: &World,
    day: usize,
) -> Result<Vec<SessionEvent>> {
    let owned;
    let ranking: &[usize] = match source {
        RankingSource::Fixed(r) => r,
        RankingSource::Model(model) => {
            if model.n_titles() != world.n_titles() {
                return Err(Error::InvalidRanking(format!(
                    "model scores {} titles, catalog has {}",
                    model.n_titles(),
                    world.n_titles()
                )));
            }
            owned = model.rank_catalog();
            &owned
        }
    };
    world.check_ranking(ranking)?;
    let per_user: Vec<Vec<SessionEvent>> = (0..world.config.n_users)
        .into_par_iter()
        .map(|user| {
            let mut rng = session_stream(world, day, user);
            run_session(user, day, ranking, world, &mut rng)
        })
        .collect();
    Ok(per_user.into_iter().flatten().collect())
}

/// Seeded pseudo-random catalog order standing in for a human-edited list.
pub fn editorial_ranking(world: &World, day: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..world.n_titles()).collect();
    let mut rng = rng::stream(seed, "editorial", &[day as u64]);
    order.shuffle(&mut rng);
    order
}

pub const EVENT_LOG_HEADER: &str = "day,user_id,position,title_id,clicked,watch_seconds";

/// Comma-separated event log with a seed comment and a header row.
pub fn write_event_log<W: Write>(
    mut out: W,
    events: &[SessionEvent],
    master_seed: u64,
) -> std::io::Result<()> {
    writeln!(out, "# master_seed={master_seed}")?;
    writeln!(out, "{EVENT_LOG_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.day,
            e.user_id,
            e.position,
            e.title_id,
            u8::from(e.clicked),
            e.watch_seconds
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_users: 200,
            n_titles: 50,
            master_seed: seed,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn degenerate_laws_give_identical_titles() {
        let cfg = WorldConfig {
            click_prob_law: NormalLaw::new(0.07, 0.0),
            intention_law: NormalLaw::new(0.4, 0.0),
            duration_law: NormalLaw::new(5000.0, 0.0),
            ..small(1)
        };
        let world = generate_world(&cfg).unwrap();
        for t in &world.titles {
            assert_eq!(
                (
                    t.click_prob,
                    t.completion_intention_prob,
                    t.duration_seconds
                ),
                (0.07, 0.4, 5000.0)
            );
        }
    }

    #[test]
    fn world_is_seeded_and_clipped() {
        let a = generate_world(&small(3)).unwrap();
        assert_eq!(a, generate_world(&small(3)).unwrap());
        assert_ne!(a.titles, generate_world(&small(4)).unwrap().titles);
        let wild = WorldConfig {
            click_prob_law: NormalLaw::new(0.5, 3.0),
            duration_law: NormalLaw::new(100.0, 5000.0),
            ..small(5)
        };
        for t in generate_world(&wild).unwrap().titles {
            assert!((PROB_FLOOR..=PROB_CEIL).contains(&t.click_prob));
            assert!(t.duration_seconds >= MIN_DURATION_SECONDS);
        }
    }

    #[test]
    fn click_prob_mean_matches_law() {
        let cfg = WorldConfig {
            master_seed: 17,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let n = world.n_titles() as f64;
        let mean = world.titles.iter().map(|t| t.click_prob).sum::<f64>() / n;
        assert!((mean - 0.05).abs() < 3.0 * 0.02 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_world(&WorldConfig {
            n_titles: 0,
            ..small(0)
        })
        .is_err());
        assert!(generate_world(&WorldConfig {
            stop_prob: 0.0,
            ..small(0)
        })
        .is_err());
        let bad_sd = WorldConfig {
            duration_law: NormalLaw::new(1.0, -1.0),
            ..small(0)
        };
        assert!(matches!(
            generate_world(&bad_sd),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn never_clicking_user_who_always_stops() {
        let cfg = WorldConfig {
            click_prob_law: NormalLaw::new(0.0, 0.0),
            stop_prob: 1.0,
            ..small(2)
        };
        let world = generate_world(&cfg).unwrap();
        let ranking: Vec<usize> = (0..50).collect();
        let events =
            simulate_session(0, 0, &ranking, &world, &mut session_stream(&world, 0, 0)).unwrap();
        assert_eq!(events.len(), 1);
        assert!(!events[0].clicked && events[0].position == 0);
    }

    #[test]
    fn sure_click_at_top() {
        let mut world = generate_world(&small(2)).unwrap();
        world.titles[9].click_prob = 1.0;
        let mut ranking: Vec<usize> = (0..50).collect();
        ranking.swap(0, 9);
        let events =
            simulate_session(0, 0, &ranking, &world, &mut session_stream(&world, 0, 0)).unwrap();
        assert_eq!(events.len(), 1);
        assert!(events[0].clicked && events[0].watch_seconds > 0.0);
        assert_eq!(events[0].title_id, 9);
    }

    #[test]
    fn invalid_rankings() {
        let world = generate_world(&small(2)).unwrap();
        let mut rng = session_stream(&world, 0, 0);
        assert!(simulate_session(0, 0, &[0, 1], &world, &mut rng).is_err());
        let mut dup: Vec<usize> = (0..50).collect();
        dup[3] = 4;
        assert!(matches!(
            simulate_session(0, 0, &dup, &world, &mut rng),
            Err(Error::InvalidRanking(_))
        ));
        let wrong_model = RankerModel::zeros(10, crate::losses::LossKind::LogLoss);
        assert!(simulate_day(RankingSource::Model(&wrong_model), &world, 0).is_err());
    }

    #[test]
    fn examined_positions_follow_reach_probabilities() {
        let cfg = WorldConfig {
            n_users: 100_000,
            master_seed: 8,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let ranking = editorial_ranking(&world, 0, 99);
        let expected: f64 = world.reach_probabilities(&ranking).iter().sum();
        let events = simulate_day(RankingSource::Fixed(&ranking), &world, 0).unwrap();
        let observed = events.len() as f64 / cfg.n_users as f64;
        assert!(
            (observed - expected).abs() / expected < 0.02,
            "{observed} vs {expected}"
        );
    }

    #[test]
    fn daily_clicks_match_expectation() {
        let cfg = WorldConfig {
            master_seed: 21,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let ranking = editorial_ranking(&world, 1, 5);
        let reach = world.reach_probabilities(&ranking);
        let p_click: f64 = reach
            .iter()
            .zip(&ranking)
            .map(|(r, &t)| r * world.titles[t].click_prob)
            .sum();
        let events = simulate_day(RankingSource::Fixed(&ranking), &world, 1).unwrap();
        let clicks = events.iter().filter(|e| e.clicked).count() as f64;
        let n = cfg.n_users as f64;
        let se = (n * p_click * (1.0 - p_click)).sqrt();
        assert!(
            (clicks - n * p_click).abs() < 3.0 * se,
            "{clicks} vs {}",
            n * p_click
        );
    }

    #[test]
    fn session_invariants_hold() {
        let world = generate_world(&small(6)).unwrap();
        for day in 0..5 {
            let ranking = editorial_ranking(&world, day, 1);
            let events = simulate_day(RankingSource::Fixed(&ranking), &world, day).unwrap();
            let mut i = 0;
            while i < events.len() {
                let user = events[i].user_id;
                let mut pos = 0;
                while i < events.len() && events[i].user_id == user {
                    let e = &events[i];
                    assert_eq!(e.position, pos);
                    assert_eq!(e.title_id, ranking[pos]);
                    if e.clicked {
                        assert!(e.watch_seconds > 0.0);
                        assert!(e.watch_seconds <= world.titles[e.title_id].duration_seconds);
                        assert!(i + 1 == events.len() || events[i + 1].user_id != user);
                    } else {
                        assert_eq!(e.watch_seconds, 0.0);
                    }
                    pos += 1;
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn user_order_does_not_matter() {
        let world = generate_world(&small(7)).unwrap();
        let ranking = editorial_ranking(&world, 2, 3);
        let forward = simulate_day(RankingSource::Fixed(&ranking), &world, 2).unwrap();
        let mut reversed = Vec::new();
        for user in (0..world.config.n_users).rev() {
            let mut rng = session_stream(&world, 2, user);
            reversed.extend(simulate_session(user, 2, &ranking, &world, &mut rng).unwrap());
        }
        reversed.sort_by_key(|e| (e.user_id, e.position));
        assert_eq!(forward, reversed);
    }

    #[test]
    fn single_user_day() {
        let world = generate_world(&WorldConfig {
            n_users: 1,
            ..small(1)
        })
        .unwrap();
        let ranking = editorial_ranking(&world, 0, 0);
        let events = simulate_day(RankingSource::Fixed(&ranking), &world, 0).unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e.user_id == 0));
    }

    #[test]
    fn editorial_permutations() {
        let world = generate_world(&small(1)).unwrap();
        let a = editorial_ranking(&world, 3, 10);
        assert_eq!(a, editorial_ranking(&world, 3, 10));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        for day in 0..100 {
            assert_ne!(
                editorial_ranking(&world, day, 10),
                editorial_ranking(&world, day + 100, 10)
            );
        }
    }

    #[test]
    fn event_log_format() {
        let events = [SessionEvent {
            user_id: 3,
            day: 1,
            position: 0,
            title_id: 7,
            clicked: true,
            watch_seconds: 12.5,
        }];
        let mut buf = Vec::new();
        write_event_log(&mut buf, &events, 9).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# master_seed=9\nday,user_id,position,title_id,clicked,watch_seconds\n1,3,0,7,1,12.5\n");
    }
}
