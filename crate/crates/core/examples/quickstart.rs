//! Trains the cyclist policy for a few epochs and prints where it places the
//! cyclist on two held-out routes.

use safegen::heatmap;
use safegen::*;

fn main() -> Result<()> {
    let graph = ScenarioGraph::preset(Preset::CyclistCrossing);
    let env = Environment::default();
    let config = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let mut trainer = Trainer::new(graph.clone(), config, StateSampler::training(), &env)?;
    let records = trainer.train(|rec, _| {
        if rec.epoch % 10 == 0 {
            println!("epoch {:>3}  reward {:>8.3}  collisions {}/{}", rec.epoch, rec.mean_reward, rec.collisions, rec.batch_size);
        }
        Ok(())
    })?;
    println!("stable collision rate {:.3}", metrics::stable_collision_rate(&records, 10)?);

    for name in ["heldout_left", "heldout_right"] {
        let route = RouteSet::find(name).expect("built-in route");
        let state = encode_state(&route, 30.0, &StateEncoding::default())?;
        let x = heatmap::policy_heatmap(&trainer.params, &state.encoded, &graph, "X", 256, &[])?;
        let y = heatmap::policy_heatmap(&trainer.params, &state.encoded, &graph, "Y", 256, &[])?;
        println!("{name}: most likely spawn X = {:.1} m, Y = {:.1} m", x.mode(), y.mode());
    }
    Ok(())
}
