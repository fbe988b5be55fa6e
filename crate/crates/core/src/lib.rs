//! Stressor discovery over forum posts: corpus cleaning, text features,
//! topic models, flair imputation, lexicon labelling and monthly trends.

pub mod corpus;
pub mod flairclf;
pub mod lexicon;
pub mod matrix_io;
pub mod textprep;
pub mod topicmodel;
pub mod trends;
