# Berry Pose - Source Package
