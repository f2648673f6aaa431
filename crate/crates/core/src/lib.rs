pub mod corpus;
pub mod criteria;
pub mod mockstub;
pub mod normalize;
pub mod pipeline;
pub mod ratio;
pub mod report;
pub mod sparql;
pub mod tgm_client;
