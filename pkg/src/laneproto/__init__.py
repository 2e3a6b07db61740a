"""Lane-change detection and trajectory prediction from prototype trajectories.

Lateral lane-change tracks are clustered into prototype mean/variance curves;
distances of a vehicle's recent motion to those prototypes feed GDA and
AdaBoost.M2 maneuver classifiers, and the prototypes combine into a Gaussian
mixture forecast whose start is fitted to the observed state with B-splines.
"""
__version__ = "0.1.0"

SCHEMAS = {
    "trajectory_csv": "vehicle_id,t,s,s_dot,d,d_dot",
    "label_csv": "vehicle_id,kind,t_start,t_end",
    "feature_csv": "vehicle_id,t,label,d,d_dot,dp_lcr,dp_lcl,dv_lcr,dv_lcl",
    "prototypes": "laneproto.prototypes/1",
    "model": "laneproto.model/1",
    "prediction": "laneproto.prediction/1",
    "report": "laneproto.report/1",
    "manifest": "laneproto.manifest/1",
}
